"""Stuck-at defect generation, programming with defects, and March-style detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CrossbarConfig, DefectCell, DefectMap, RngSeed, StuckKind, as_rng

#: ``on_off_ratio`` sentinels for all-ON and all-OFF defect populations.
PURE_ON = float("inf")
PURE_OFF = 0.0


@dataclass(frozen=True)
class DefectSpec:
    """Defect ``rate`` (fraction of cells) and Stuck-ON:Stuck-OFF ratio ``r:1``."""

    rate: float
    on_off_ratio: float = 1.0
    seed: RngSeed | int = 0

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise ValueError(f"defect rate must be in [0, 1], got {self.rate}")
        if not (self.on_off_ratio > 0 or self.on_off_ratio in (PURE_ON, PURE_OFF)):
            raise ValueError(f"on_off_ratio must be positive, got {self.on_off_ratio}")

    @property
    def on_probability(self) -> float:
        r = self.on_off_ratio
        if r == PURE_ON:
            return 1.0
        return r / (1.0 + r)


def parse_ratio(text: str) -> float:
    """Read ``"1.75/9"`` style ON:OFF ratios (also plain numbers, ``on``, ``off``)."""
    text = str(text).strip().lower()
    if text in ("on", "inf"):
        return PURE_ON
    if text == "off":
        return PURE_OFF
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def inject_defects(cfg: CrossbarConfig, spec: DefectSpec) -> DefectMap:
    """Uniformly place ``round(rate * n * m)`` stuck cells.

    Positions are drawn first and kinds second from the same stream, so the
    same seed at a different ON:OFF ratio keeps the same defect positions.
    """
    rng = as_rng(spec.seed)
    n, m = cfg.shape
    count = int(round(spec.rate * n * m))
    flat = rng.choice(n * m, size=count, replace=False)
    is_on = rng.random(count) < spec.on_probability
    cells = [
        DefectCell(
            int(f // m), int(f % m),
            cfg.hgs if on else cfg.lgs,
            StuckKind.ON if on else StuckKind.OFF,
        )
        for f, on in zip(flat, is_on)
    ]
    return DefectMap(cfg.shape, tuple(cells))


def apply_defects(G_programmed, defects: DefectMap) -> np.ndarray:
    """Return a copy of ``G_programmed`` with stuck cells forced to their values."""
    G = np.array(G_programmed, dtype=float)
    if G.shape != defects.shape:
        raise ValueError(f"matrix shape {G.shape} != defect map shape {defects.shape}")
    if len(defects):
        G[defects.rows, defects.cols] = defects.values
    return G


def scan_defects(cfg: CrossbarConfig, true_defects: DefectMap, read_noise_sigma: float = 0.0,
                 seed=0, threshold: float | None = None) -> DefectMap:
    """Detect stuck cells by a write-LGS/read, write-HGS/read pass over the array.

    Writes do nothing on stuck cells; each read returns the device
    conductance plus Gaussian noise of std ``read_noise_sigma`` (S). A cell
    is flagged when either read misses its written value by more than
    ``threshold`` (default 5% of the conductance window).
    """
    if true_defects.shape != cfg.shape:
        raise ValueError(f"defect map shape {true_defects.shape} != crossbar {cfg.shape}")
    if read_noise_sigma < 0:
        raise ValueError("read_noise_sigma must be >= 0")
    lgs, hgs = cfg.lgs, cfg.hgs
    tau = 0.05 * (hgs - lgs) if threshold is None else threshold
    n, m = cfg.shape
    state_low = np.full((n, m), lgs)
    state_high = np.full((n, m), hgs)
    state_low = apply_defects(state_low, true_defects)
    state_high = apply_defects(state_high, true_defects)
    rng = as_rng(seed)
    g1 = state_low + read_noise_sigma * rng.standard_normal((n, m))
    g2 = state_high + read_noise_sigma * rng.standard_normal((n, m))
    flagged = (np.abs(g1 - lgs) > tau) | (np.abs(g2 - hgs) > tau)
    rows, cols = np.nonzero(flagged)
    stuck = np.clip((g1[rows, cols] + g2[rows, cols]) / 2, lgs, hgs)
    cells = []
    for r, c, v in zip(rows, cols, stuck):
        # canonical kinds only for exact values; noisy estimates stay OTHER
        kind = StuckKind.ON if v == hgs else StuckKind.OFF if v == lgs else StuckKind.OTHER
        cells.append(DefectCell(int(r), int(c), float(v), kind))
    return DefectMap(cfg.shape, tuple(cells))
