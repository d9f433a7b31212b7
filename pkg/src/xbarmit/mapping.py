"""Value <-> conductance mapping and parasitic-aware conductance targets.

Signed values use one device per entry: ``g = g_offset + a * g_scale`` with
``g_offset`` the window midpoint. Decoding removes the offset digitally using
``sum(x)``, which is unchanged by row shuffling.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .circuit import CrossbarCircuit
from .core import CrossbarConfig, DefectMap, check_matrix
from .defects import apply_defects

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodeParams:
    g_offset: float
    g_scale: float
    v_read: float

    def __post_init__(self):
        if not self.g_scale > 0:
            raise ValueError("g_scale must be > 0")

    @classmethod
    def from_config(cls, cfg: CrossbarConfig) -> "DecodeParams":
        return cls((cfg.hgs + cfg.lgs) / 2, (cfg.hgs - cfg.lgs) / 2, cfg.v_read)


def linear_map(A, cfg: CrossbarConfig) -> np.ndarray:
    """Affine map of values in [-1, 1] onto [LGS, HGS]."""
    A = check_matrix(A, cfg, "A")
    if np.any(np.abs(A) > 1):
        raise ValueError("matrix entries must lie in [-1, 1]")
    p = DecodeParams.from_config(cfg)
    return np.clip(p.g_offset + A * p.g_scale, cfg.lgs, cfg.hgs)


def decode_output(I, sum_x, params: DecodeParams) -> np.ndarray:
    """Column currents back to value space: ``(I/v_read - g_offset*sum_x) / g_scale``.

    ``I`` may be ``(cols,)`` with scalar ``sum_x`` or ``(T, cols)`` with
    ``sum_x`` of shape ``(T,)``.
    """
    I = np.asarray(I, dtype=float)
    sum_x = np.asarray(sum_x, dtype=float)
    if I.ndim == 2:
        sum_x = sum_x.reshape(-1, 1)
    return (I / params.v_read - params.g_offset * sum_x) / params.g_scale


@dataclass(frozen=True)
class PmOptions:
    calibration_input: np.ndarray | None = None
    max_iters: int = 100
    rel_tol: float = 1e-6
    damping: float = 0.7
    epsilon_drop: float = 1e-12

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.max_iters < 1 or self.rel_tol <= 0 or self.epsilon_drop < 0:
            raise ValueError("invalid parasitic-aware mapping options")


@dataclass(frozen=True)
class PmResult:
    G: np.ndarray
    converged: bool
    iterations: int
    max_rel_change: float


def parasitic_aware_map(G_target, cfg: CrossbarConfig, defects: DefectMap | None = None,
                        opt: PmOptions | None = None) -> PmResult:
    """Find ``G'`` whose cell currents in the parasitic array match the ideal ones.

    Damped fixed-point iteration at a single calibration input: each pass
    solves the circuit with the current ``G'`` (defect cells held at their
    stuck values), and moves every healthy cell towards the conductance that
    would pass its ideal current ``g_target * v`` at the observed cell drop.
    Candidates are clipped to [LGS, HGS].
    """
    opt = opt or PmOptions()
    G_target = check_matrix(G_target, cfg, "G_target")
    defects = defects if defects is not None else DefectMap.empty(cfg.shape)
    healthy = ~defects.mask()
    x_cal = np.ones(cfg.rows) if opt.calibration_input is None else np.asarray(opt.calibration_input, float)
    v_cal = x_cal * cfg.v_read
    i_star = G_target * v_cal[:, None]
    beta, r_t = cfg.beta, cfg.r_transistor

    G = apply_defects(G_target, defects)
    change = np.inf
    for it in range(1, opt.max_iters + 1):
        drop = CrossbarCircuit(cfg, G).solve(x_cal).device_drops
        u_dev = drop - r_t * i_star
        ok = healthy & (np.abs(drop) > opt.epsilon_drop)
        cand = G.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            if beta == 0:
                c = i_star / u_dev
            else:
                # the sinh law is linear in g, so the inversion is closed-form
                c = i_star * beta / np.sinh(beta * u_dev)
        c = np.where(np.isfinite(c) & (c > 0), c, cfg.lgs)
        cand[ok] = np.clip(c[ok], cfg.lgs, cfg.hgs)
        G_new = G + opt.damping * (cand - G)
        G_new[~healthy] = G[~healthy]
        change = float(np.max(np.abs(G_new - G) / G)) if G.size else 0.0
        G = G_new
        if change < opt.rel_tol:
            return PmResult(G, True, it, change)
    log.warning("parasitic-aware mapping stopped after %d iterations (max rel change %.2e)",
                opt.max_iters, change)
    return PmResult(G, False, opt.max_iters, change)


def conductance_to_csv(G) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.asarray(G, dtype=float), delimiter=",", fmt="%.17g")
    return buf.getvalue()


def conductance_from_csv(text: str) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(io.StringIO(text), delimiter=",", dtype=float))
