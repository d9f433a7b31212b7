"""Mitigation flow: detect -> shuffle -> map -> program -> calibrate, then infer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np

from .circuit import CrossbarCircuit
from .compensate import CompensationModel, calibrate, compensate, select_compensated_defects
from .core import CrossbarConfig, DefectMap, Permutation, as_seed, check_matrix
from .defects import apply_defects, scan_defects
from .mapping import (
    DecodeParams,
    PmOptions,
    PmResult,
    conductance_from_csv,
    conductance_to_csv,
    decode_output,
    linear_map,
    parasitic_aware_map,
)
from .shuffle import apply_shuffle, build_cost_matrix, shuffle_input, solve_assignment


@dataclass(frozen=True)
class MethodCombo:
    rs: bool = False
    oc: bool = False
    pm: bool = False
    variant: str = "B"
    oc_rate: float = 1.0

    @property
    def name(self) -> str:
        parts = [tag for tag, on in (("RS", self.rs), ("OC", self.oc), ("PM", self.pm)) if on]
        return "+".join(parts) or "Baseline"

    @classmethod
    def from_name(cls, name: str, variant: str = "B", oc_rate: float = 1.0) -> "MethodCombo":
        tags = {t.strip().upper() for t in name.split("+")}
        if tags == {"BASELINE"}:
            tags = set()
        unknown = tags - {"RS", "OC", "PM"}
        if unknown:
            raise ValueError(f"unknown method(s) {sorted(unknown)} in {name!r}")
        return cls("RS" in tags, "OC" in tags, "PM" in tags, variant, oc_rate)


COMBO_NAMES = ("Baseline", "RS", "OC", "RS+OC", "PM", "RS+PM", "OC+PM", "RS+OC+PM")
ALL_COMBOS = tuple(MethodCombo.from_name(n) for n in COMBO_NAMES)


@dataclass(frozen=True, eq=False)
class PreparedCrossbar:
    """A programmed crossbar plus everything inference needs.

    ``G_target`` is the intended (shuffled, linearly mapped) conductance
    matrix and ``G_programmed`` what the array actually holds.
    """

    cfg: CrossbarConfig
    perm: Permutation
    G_target: np.ndarray
    G_programmed: np.ndarray
    defects: DefectMap
    decode: DecodeParams
    compensation: CompensationModel | None = None
    pm: PmResult | None = field(default=None, compare=False)

    @cached_property
    def circuit(self) -> CrossbarCircuit:
        return CrossbarCircuit(self.cfg, self.G_programmed)

    def sense(self, X) -> np.ndarray:
        return self.circuit.column_currents(X)

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.txt").write_text("".join(f"{k}={v!r}\n" for k, v in asdict(self.cfg).items()))
        (d / "conductance.csv").write_text(conductance_to_csv(self.G_programmed))
        (d / "target.csv").write_text(conductance_to_csv(self.G_target))
        (d / "defects.txt").write_text(self.defects.to_text())
        (d / "permutation.txt").write_text(self.perm.to_text())
        if self.compensation is not None:
            (d / "compensation.txt").write_text(self.compensation.to_text())
        return d

    @classmethod
    def load(cls, directory) -> "PreparedCrossbar":
        d = Path(directory)
        types = {f.name: f.type for f in fields(CrossbarConfig)}
        kv = dict(line.split("=", 1) for line in (d / "config.txt").read_text().splitlines() if line)
        cfg = CrossbarConfig(**{k: (int(v) if types[k] in (int, "int") else float(v)) for k, v in kv.items()})
        comp = d / "compensation.txt"
        return cls(
            cfg=cfg,
            perm=Permutation.from_text((d / "permutation.txt").read_text()),
            G_target=conductance_from_csv((d / "target.csv").read_text()),
            G_programmed=conductance_from_csv((d / "conductance.csv").read_text()),
            defects=DefectMap.from_text((d / "defects.txt").read_text(), cfg.shape),
            decode=DecodeParams.from_config(cfg),
            compensation=CompensationModel.from_text(comp.read_text()) if comp.exists() else None,
        )


def prepare(A, cfg: CrossbarConfig, defects_truth: DefectMap, combo: MethodCombo, seed=0,
            read_noise_sigma: float = 0.0, pm_options: PmOptions | None = None,
            n_calibration: int = 512) -> PreparedCrossbar:
    """Run the mitigation flow for value matrix ``A`` on a defective crossbar."""
    A = check_matrix(A, cfg, "A")
    defects_truth.validate(cfg)
    seed = as_seed(seed)
    detected = scan_defects(cfg, defects_truth, read_noise_sigma, seed=seed.child(1))

    perm = Permutation.identity(cfg.rows)
    if combo.rs:
        perm, _ = solve_assignment(build_cost_matrix(linear_map(A, cfg), detected))
    G_target = linear_map(apply_shuffle(A, perm), cfg)

    pm = None
    G_map = G_target
    if combo.pm:
        pm = parasitic_aware_map(G_target, cfg, detected, pm_options)
        G_map = pm.G
    G_programmed = apply_defects(G_map, defects_truth)

    sim = CrossbarCircuit(cfg, G_programmed)
    compensation = None
    if combo.oc:
        subset = select_compensated_defects(detected, G_target, combo.oc_rate)
        compensation = calibrate(sim.column_currents, G_target, subset, combo.variant,
                                 n_calibration, seed.child(2), cfg.v_read, combo.oc_rate)
    prepared = PreparedCrossbar(cfg, perm, G_target, G_programmed, detected,
                                DecodeParams.from_config(cfg), compensation, pm)
    # hand over the calibrated circuit so its factorization is reused by infer()
    prepared.__dict__["circuit"] = sim
    return prepared


def infer(p: PreparedCrossbar, x) -> np.ndarray:
    """Decoded crossbar outputs for input ``x`` (one vector or a ``(T, rows)`` batch)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.cfg.rows:
        raise ValueError(f"input length {x.shape[-1]} does not match {p.cfg.rows} rows")
    xs = shuffle_input(x, p.perm)
    I = p.sense(xs)
    if p.compensation is not None:
        I = compensate(p.compensation, xs, I)
    return decode_output(I, xs.sum(axis=-1), p.decode)
