"""Shared domain types: crossbar configuration, defect maps, permutations, seeds.

Matrices (application values and conductances) are plain ``numpy`` arrays of
shape ``(rows, cols)``; conductances are in Siemens, currents in Amperes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np


class StuckKind(enum.Enum):
    ON = "StuckOn"
    OFF = "StuckOff"
    OTHER = "Other"


@dataclass(frozen=True)
class CrossbarConfig:
    """Geometry, device bounds and parasitics of one 1T1M crossbar.

    Resistances are in Ohm. ``r_wire`` is the segment between two adjacent
    cross-points, ``r_in`` the driver resistance in series with each row and
    ``r_out`` the sense resistance terminating each column into virtual
    ground. ``beta`` (1/V) selects the sinh device law; 0 means linear.
    """

    rows: int
    cols: int
    r_on: float = 15e3
    r_off: float = 300e3
    r_wire: float = 1.0
    r_in: float = 1.0
    r_out: float = 1.0
    v_read: float = 0.2
    beta: float = 0.0
    r_transistor: float = 0.0

    def __post_init__(self):
        if int(self.rows) != self.rows or self.rows < 1:
            raise ValueError(f"rows must be a positive integer, got {self.rows}")
        if int(self.cols) != self.cols or self.cols < 1:
            raise ValueError(f"cols must be a positive integer, got {self.cols}")
        if not 0 < self.r_on < self.r_off:
            raise ValueError(f"need 0 < r_on < r_off, got r_on={self.r_on}, r_off={self.r_off}")
        for name in ("r_wire", "r_in", "r_out", "r_transistor"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not self.v_read > 0:
            raise ValueError(f"v_read must be > 0, got {self.v_read}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def lgs(self) -> float:
        return 1.0 / self.r_off

    @property
    def hgs(self) -> float:
        return 1.0 / self.r_on

    def with_size(self, rows: int, cols: int) -> "CrossbarConfig":
        return replace(self, rows=rows, cols=cols)

    def ideal(self) -> "CrossbarConfig":
        """Same devices, no parasitic resistances."""
        return replace(self, r_wire=0.0, r_in=0.0, r_out=0.0, r_transistor=0.0)


def derived_bounds(cfg: CrossbarConfig) -> tuple[float, float]:
    """Return ``(LGS, HGS) = (1/r_off, 1/r_on)``."""
    return cfg.lgs, cfg.hgs


def ideal_vmm(x, G, v_read: float) -> np.ndarray:
    """Column currents of a parasitic-free crossbar, ``I = (x * v_read) @ G``.

    ``x`` may be one vector of length ``rows`` or a batch ``(T, rows)``.
    """
    x = np.asarray(x, dtype=float)
    G = np.asarray(G, dtype=float)
    if x.shape[-1] != G.shape[0]:
        raise ValueError(f"input length {x.shape[-1]} does not match {G.shape[0]} rows")
    return (x * v_read) @ G


@dataclass(frozen=True)
class DefectCell:
    row: int
    col: int
    stuck_conductance: float
    kind: StuckKind


DEFECT_HEADER = "row,col,kind,stuck_conductance_siemens"


@dataclass(frozen=True)
class DefectMap:
    """Set of stuck cells on a crossbar of the given ``shape``.

    Cells are kept sorted by ``(row, col)`` so equal maps compare equal.
    """

    shape: tuple[int, int]
    cells: tuple[DefectCell, ...] = ()

    def __post_init__(self):
        cells = tuple(sorted(self.cells, key=lambda c: (c.row, c.col)))
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        object.__setattr__(self, "cells", cells)
        seen = set()
        n, m = self.shape
        for c in cells:
            if not (0 <= c.row < n and 0 <= c.col < m):
                raise IndexError(f"defect ({c.row}, {c.col}) outside crossbar {n}x{m}")
            if (c.row, c.col) in seen:
                raise ValueError(f"duplicate defect at ({c.row}, {c.col})")
            seen.add((c.row, c.col))

    @classmethod
    def empty(cls, shape) -> "DefectMap":
        return cls(tuple(shape), ())

    @classmethod
    def from_arrays(cls, shape, rows, cols, values, kinds) -> "DefectMap":
        cells = [
            DefectCell(int(r), int(c), float(v), StuckKind(k) if not isinstance(k, StuckKind) else k)
            for r, c, v, k in zip(rows, cols, values, kinds)
        ]
        return cls(tuple(shape), tuple(cells))

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[DefectCell]:
        return iter(self.cells)

    @property
    def rows(self) -> np.ndarray:
        return np.array([c.row for c in self.cells], dtype=int)

    @property
    def cols(self) -> np.ndarray:
        return np.array([c.col for c in self.cells], dtype=int)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.stuck_conductance for c in self.cells], dtype=float)

    def positions(self) -> set[tuple[int, int]]:
        return {(c.row, c.col) for c in self.cells}

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        if self.cells:
            out[self.rows, self.cols] = True
        return out

    def count(self, kind: StuckKind) -> int:
        return sum(1 for c in self.cells if c.kind is kind)

    def subset(self, keep: Iterable[DefectCell]) -> "DefectMap":
        return DefectMap(self.shape, tuple(keep))

    def validate(self, cfg: CrossbarConfig, rtol: float = 1e-12) -> None:
        """Check bounds and the canonical stuck values against ``cfg``."""
        if self.shape != cfg.shape:
            raise ValueError(f"defect map shape {self.shape} != crossbar {cfg.shape}")
        for c in self.cells:
            if c.kind is StuckKind.ON and not np.isclose(c.stuck_conductance, cfg.hgs, rtol=rtol, atol=0):
                raise ValueError(f"StuckOn cell ({c.row}, {c.col}) not at HGS")
            if c.kind is StuckKind.OFF and not np.isclose(c.stuck_conductance, cfg.lgs, rtol=rtol, atol=0):
                raise ValueError(f"StuckOff cell ({c.row}, {c.col}) not at LGS")

    def to_text(self) -> str:
        lines = [DEFECT_HEADER]
        lines += [f"{c.row},{c.col},{c.kind.value},{c.stuck_conductance!r}" for c in self.cells]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, shape) -> "DefectMap":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != DEFECT_HEADER:
            raise ValueError("missing defect map header")
        cells = []
        for ln in lines[1:]:
            r, c, kind, value = ln.split(",")
            cells.append(DefectCell(int(r), int(c), float(value), StuckKind(kind)))
        return cls(tuple(shape), tuple(cells))


@dataclass(frozen=True)
class Permutation:
    """Row mapping: ``order[i]`` is the source row placed on crossbar row ``i``."""

    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=int).copy()
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(order.size)):
            raise ValueError("not a permutation of 0..n-1")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def __len__(self) -> int:
        return self.order.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and np.array_equal(self.order, other.order)

    def __hash__(self) -> int:
        return hash(self.order.tobytes())

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size)
        return Permutation(inv)

    def compose(self, other: "Permutation") -> "Permutation":
        """Permutation equivalent to applying ``self`` then ``other``."""
        return Permutation(self.order[other.order])

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.order, np.arange(self.order.size)))

    def to_text(self) -> str:
        return ",".join(str(int(i)) for i in self.order) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Permutation":
        return cls(np.array([int(tok) for tok in text.strip().split(",")], dtype=int))


@dataclass(frozen=True)
class RngSeed:
    """64-bit seed plus stream id; the same pair always yields the same draws."""

    seed: int
    stream: Sequence[int] | int = field(default=0)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        stream = (self.stream,) if isinstance(self.stream, (int, np.integer)) else tuple(self.stream)
        object.__setattr__(self, "stream", tuple(int(s) for s in stream))

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.stream)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence()))

    def child(self, *stream: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream + tuple(int(s) for s in stream))


def as_rng(seed) -> np.random.Generator:
    """Accept an ``RngSeed``, an int or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return RngSeed(int(seed)).generator()


def as_seed(seed) -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


def check_matrix(G, cfg: CrossbarConfig, name: str = "G") -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != cfg.shape:
        raise ValueError(f"{name} has shape {G.shape}, crossbar is {cfg.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError(f"{name} has non-finite entries")
    return G
