"""Output compensation: per-column linear estimates of the defect error current.

For column ``j`` with compensated defects on rows ``l_1..l_k`` the error
current (ideal column current minus the sensed one) is estimated either as

* variant ``"A"``: ``a_j * sum_i dG_i * v_{l_i} + b_j``
* variant ``"B"``: ``sum_i w_i * v_{l_i} + b_j``

with coefficients fitted by ordinary least squares on calibration inputs, and
added back to the sensed current before decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DefectMap, as_rng

VARIANTS = ("A", "B")


def delta_g_matrix(G_target, defects: DefectMap) -> np.ndarray:
    """Dense ``G_target - stuck`` at defect cells, zero elsewhere."""
    G_target = np.asarray(G_target, dtype=float)
    D = np.zeros_like(G_target)
    if len(defects):
        r, c = defects.rows, defects.cols
        D[r, c] = G_target[r, c] - defects.values
    return D


def ideal_error_current(x, delta_g, v_read: float) -> np.ndarray:
    """Error current of an ideal crossbar, ``sum_i dG[l_i, j] * x[l_i] * v_read``.

    ``delta_g`` is the dense matrix from :func:`delta_g_matrix`.
    """
    return (np.asarray(x, dtype=float) * v_read) @ np.asarray(delta_g, dtype=float)


def actual_error_current(x, G_target, I_sensed, v_read: float) -> np.ndarray:
    """Ideal target current minus the sensed column current."""
    return (np.asarray(x, dtype=float) * v_read) @ np.asarray(G_target, dtype=float) - np.asarray(I_sensed)


def oc_budget(oc_rate: float, rows: int) -> int:
    """Compensated defects allowed per column, ``ceil(oc_rate * rows)``."""
    if not 0 < oc_rate <= 1:
        raise ValueError(f"oc_rate must be in (0, 1], got {oc_rate}")
    # guard against 0.07*100 = 7.000000000000001
    return int(math.ceil(oc_rate * rows - 1e-9))


def select_compensated_defects(defects: DefectMap, G_target, oc_rate: float) -> DefectMap:
    """Keep the ``oc_budget`` defects with the largest ``|dG|`` in every column."""
    budget = oc_budget(oc_rate, defects.shape[0])
    G_target = np.asarray(G_target, dtype=float)
    keep = []
    by_col: dict[int, list] = {}
    for cell in defects:
        by_col.setdefault(cell.col, []).append(cell)
    for col in sorted(by_col):
        cells = by_col[col]
        cells.sort(key=lambda c: (-abs(G_target[c.row, c.col] - c.stuck_conductance), c.row))
        keep.extend(cells[:budget])
    return defects.subset(keep)


@dataclass(frozen=True)
class ColumnFit:
    col: int
    rows: np.ndarray
    delta_g: np.ndarray
    coeffs: np.ndarray
    intercept: float
    residual_rms: float
    rank_deficient: bool = False


@dataclass(frozen=True)
class CompensationModel:
    variant: str
    columns: tuple[ColumnFit, ...]
    oc_rate: float
    calibration_samples: int
    v_read: float

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def rank_deficient(self) -> bool:
        return any(c.rank_deficient for c in self.columns)

    def features(self, x, fit: ColumnFit) -> np.ndarray:
        """Design-matrix columns (without intercept) for one column's fit."""
        v = np.atleast_2d(np.asarray(x, dtype=float))[:, fit.rows] * self.v_read
        if self.variant == "A":
            return (v @ fit.delta_g)[:, None] if fit.rows.size else v[:, :0]
        return v

    def estimate(self, x) -> np.ndarray:
        """Estimated error current per column; ``(cols,)`` or ``(T, cols)``."""
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        out = np.empty((X.shape[0], len(self.columns)))
        for fit in self.columns:
            out[:, fit.col] = self.features(X, fit) @ fit.coeffs + fit.intercept
        return out[0] if x.ndim == 1 else out

    def to_text(self) -> str:
        lines = [
            f"# variant={self.variant}; oc_rate={self.oc_rate!r}; "
            f"calibration_samples={self.calibration_samples}; v_read={self.v_read!r}"
        ]
        for f in self.columns:
            lines.append(
                f"{f.col}; {self.variant}; rows=[{','.join(str(int(r)) for r in f.rows)}]; "
                f"delta_g=[{','.join(repr(float(d)) for d in f.delta_g)}]; "
                f"coeffs=[{','.join(repr(float(c)) for c in f.coeffs)}]; "
                f"{float(f.intercept)!r}; {float(f.residual_rms)!r}; rank_deficient={int(f.rank_deficient)}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CompensationModel":
        def floats(tok, key):
            body = tok.strip()[len(key) + 2:-1]
            return np.array([float(t) for t in body.split(",")] if body else [], dtype=float)

        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = dict(kv.strip().split("=") for kv in lines[0].lstrip("# ").split(";"))
        cols = []
        for ln in lines[1:]:
            parts = ln.split(";")
            cols.append(ColumnFit(
                col=int(parts[0]),
                rows=floats(parts[2], "rows").astype(int),
                delta_g=floats(parts[3], "delta_g"),
                coeffs=floats(parts[4], "coeffs"),
                intercept=float(parts[5]),
                residual_rms=float(parts[6]),
                rank_deficient=bool(int(parts[7].split("=")[1])),
            ))
        return cls(head["variant"], tuple(cols), float(head["oc_rate"]),
                   int(head["calibration_samples"]), float(head["v_read"]))


def calibrate(simulate: Callable[[np.ndarray], np.ndarray], G_target, defects: DefectMap,
              variant: str = "B", n_samples: int = 512, seed=0, v_read: float = 0.2,
              oc_rate: float = 1.0) -> CompensationModel:
    """Fit a compensation model against ``simulate``.

    ``simulate`` maps a batch of inputs ``(T, rows)`` to sensed currents
    ``(T, cols)``; it may be the circuit model or a measured array.
    ``defects`` holds the (already budget-selected) cells to compensate, at
    their crossbar positions.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    G_target = np.asarray(G_target, dtype=float)
    n, m = G_target.shape
    per_col = np.bincount(defects.cols, minlength=m) if len(defects) else np.zeros(m, int)
    n_feat = 1 if variant == "A" else int(per_col.max(initial=0))
    if n_samples < n_feat + 1:
        raise ValueError(f"need at least {n_feat + 1} calibration samples, got {n_samples}")
    rng = as_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n_samples, n))
    err = actual_error_current(X, G_target, simulate(X), v_read)
    D = delta_g_matrix(G_target, defects)

    proto = CompensationModel(variant, (), oc_rate, n_samples, v_read)
    fits = []
    for j in range(m):
        rows = np.sort(defects.rows[defects.cols == j]) if len(defects) else np.zeros(0, int)
        fit = ColumnFit(j, rows, D[rows, j], np.zeros(0), 0.0, 0.0)
        F = proto.features(X, fit)
        design = np.column_stack([F, np.ones(n_samples)])
        # equilibrate columns: features are ~0.1 V (B) or ~1e-6 A (A) next to the intercept
        norms = np.linalg.norm(design, axis=0)
        norms[norms == 0] = 1.0
        sol, _, rank, _ = np.linalg.lstsq(design / norms, err[:, j], rcond=None)
        sol = sol / norms
        resid = err[:, j] - design @ sol
        fits.append(ColumnFit(
            col=j, rows=rows, delta_g=D[rows, j], coeffs=sol[:-1], intercept=float(sol[-1]),
            residual_rms=float(np.sqrt(np.mean(resid ** 2))),
            rank_deficient=bool(rank < design.shape[1]),
        ))
    return CompensationModel(variant, tuple(fits), oc_rate, n_samples, v_read)


def compensate(model: CompensationModel, x, I_sensed) -> np.ndarray:
    """Sensed currents plus the model's estimated error current."""
    return np.asarray(I_sensed, dtype=float) + model.estimate(x)
