"""Experiment plans, sweep execution and the results CSV.

A plan is a Cartesian grid over crossbar size, defect rate, ON:OFF ratio,
wire resistance, method combo and OC rate, repeated for every seed. Each
(point, seed) cell draws a fresh value matrix and test inputs, injects
defects, runs the mitigation flow and scores the decoded outputs.

Random streams are keyed by (seed, size, defect rate) only, so all combos,
ratios, wire resistances and OC rates at that key see the same matrix,
inputs and defect positions. That keeps the comparisons paired.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import CrossbarConfig, RngSeed
from .defects import DefectSpec, inject_defects, parse_ratio
from .metrics import bit_accuracy
from .pipeline import COMBO_NAMES, MethodCombo, infer, prepare

log = logging.getLogger(__name__)

SWEEPS = ("vmm-sweep", "rwire-sweep", "ratio-sweep", "ocrate-sweep", "single")
CSV_HEADER = ("sweep", "size_rows", "size_cols", "defect_rate", "on_off_ratio", "r_wire", "combo",
              "oc_rate", "variant", "seed", "mean_bits", "worst_bits", "runtime_ms", "status")
AGGREGATE_SEED = -1

# stream ids under each seed
_STREAM_DATA, _STREAM_DEFECTS, _STREAM_PREPARE = 1, 2, 3


@dataclass(frozen=True)
class ExperimentPlan:
    """Grid, seeds and fixed circuit settings of one experiment.

    With ``tie_parasitics`` the driver and sense resistances follow the wire
    resistance of each grid point (``r_in = r_out = r_wire``); otherwise
    ``r_in``/``r_out`` are used as given.
    """

    sweep: str = "single"
    sizes: tuple[int, ...] = (32,)
    defect_rates: tuple[float, ...] = (0.1,)
    on_off_ratios: tuple[float, ...] = (1.0,)
    r_wires: tuple[float, ...] = (1.0,)
    combos: tuple[str, ...] = ("RS+OC+PM",)
    oc_rates: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    variant: str = "B"
    n_test: int = 256
    n_calibration: int = 512
    beta: float = 0.0
    r_on: float = 15e3
    r_off: float = 300e3
    v_read: float = 0.2
    r_transistor: float = 0.0
    tie_parasitics: bool = True
    r_in: float = 1.0
    r_out: float = 1.0
    read_noise_sigma: float = 0.0
    threads: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"unknown sweep {self.sweep!r}; expected one of {SWEEPS}")
        for name in ("sizes", "defect_rates", "on_off_ratios", "r_wires", "combos", "oc_rates", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"plan grid {name!r} is empty")
            object.__setattr__(self, name, value)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("plan seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        for c in self.combos:
            MethodCombo.from_name(c)
        if self.n_test < 2:
            raise ValueError("n_test must be >= 2")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def points(self):
        """Grid points in emission order."""
        for size in self.sizes:
            for rate in self.defect_rates:
                for ratio in self.on_off_ratios:
                    for rw in self.r_wires:
                        for combo in self.combos:
                            for oc_rate in self.oc_rates:
                                yield GridPoint(size, rate, ratio, rw, combo, oc_rate)

    def config_for(self, point: "GridPoint") -> CrossbarConfig:
        r_in, r_out = (point.r_wire, point.r_wire) if self.tie_parasitics else (self.r_in, self.r_out)
        return CrossbarConfig(point.size, point.size, r_on=self.r_on, r_off=self.r_off,
                              r_wire=point.r_wire, r_in=r_in, r_out=r_out, v_read=self.v_read,
                              beta=self.beta, r_transistor=self.r_transistor)


@dataclass(frozen=True)
class GridPoint:
    size: int
    defect_rate: float
    on_off_ratio: float
    r_wire: float
    combo: str
    oc_rate: float


@dataclass(frozen=True)
class ResultRow:
    sweep: str
    size_rows: int
    size_cols: int
    defect_rate: float
    on_off_ratio: float
    r_wire: float
    combo: str
    oc_rate: float
    variant: str
    seed: int
    mean_bits: float
    worst_bits: float
    runtime_ms: float
    status: str

    @property
    def is_aggregate(self) -> bool:
        return self.seed == AGGREGATE_SEED


# ---------------------------------------------------------------- plan files


_LIST_FIELDS = {"sizes": int, "defect_rates": float, "on_off_ratios": parse_ratio,
                "r_wires": float, "combos": str, "oc_rates": float, "seeds": int}


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(ExperimentPlan)}
    if name not in types:
        raise ValueError(f"unknown plan key {name!r}")
    if name in _LIST_FIELDS:
        if isinstance(raw, str):
            raw = [t for t in (s.strip() for s in raw.split(",")) if t]
        return tuple(_LIST_FIELDS[name](v) for v in raw)
    if not isinstance(raw, str):
        return raw
    t = types[name]
    if "bool" in t:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw.strip() or None if "None" in t else raw.strip()


def read_plan_file(path, extra_keys: dict | None = None) -> dict:
    """Key-value plan file (``key = value``, lists comma separated, ``#`` comments).

    ``extra_keys`` maps additional accepted keys to their converters.
    """
    extra_keys = extra_keys or {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read plan file {path}: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[plan]\n" + text
    parser.read_string(text, source=str(path))
    section = parser["plan"] if parser.has_section("plan") else {}
    out = {}
    for key, raw in section.items():
        key = key.replace("-", "_")
        out[key] = extra_keys[key](raw) if key in extra_keys else _coerce(key, raw)
    return out


def build_plan(sweep: str, profile: str = "desk", config_path=None, **overrides) -> ExperimentPlan:
    """Defaults for ``sweep``/``profile``, then the plan file, then ``overrides``.

    ``None`` overrides are ignored so unparsed CLI flags fall through.
    """
    values = dict(profile_defaults(sweep, profile))
    if config_path is not None:
        values.update(read_plan_file(config_path))
    values.update({k: _coerce(k, v) for k, v in overrides.items() if v is not None})
    values["sweep"] = sweep
    return ExperimentPlan(**values)


def profile_defaults(sweep: str, profile: str = "desk") -> dict:
    """Grids for each sweep. ``desk`` keeps sizes at or below 64x64."""
    if profile not in ("desk", "full"):
        raise ValueError(f"unknown profile {profile!r}")
    full = profile == "full"
    if sweep == "vmm-sweep":
        return dict(sizes=(8, 16, 32, 64, 128) if full else (8, 16, 32, 64),
                    defect_rates=(0.01, 0.02, 0.05, 0.10, 0.15, 0.20) if full else (0.02, 0.05, 0.10),
                    combos=COMBO_NAMES)
    if sweep == "rwire-sweep":
        return dict(sizes=(32, 64, 128) if full else (32,), defect_rates=(0.0,),
                    r_wires=(0.1, 0.3, 1.0, 3.0, 10.0) if full else (0.1, 1.0, 10.0),
                    combos=("Baseline", "PM") if full else ("Baseline",))
    if sweep == "ratio-sweep":
        return dict(sizes=(128,) if full else (64,), defect_rates=(0.10,),
                    on_off_ratios=(1.75 / 9, 1.0, 9 / 1.75),
                    combos=COMBO_NAMES if full else ("PM", "RS+OC+PM"))
    if sweep == "ocrate-sweep":
        return dict(sizes=(128,) if full else (64,), defect_rates=(0.10,),
                    oc_rates=(0.01, 0.02, 0.05, 0.10), combos=("OC+PM",))
    if sweep == "single":
        return dict(sizes=(64,) if full else (32,), defect_rates=(0.10,), combos=("RS+OC+PM",))
    raise ValueError(f"unknown sweep {sweep!r}")


# ---------------------------------------------------------------- execution


def _rate_key(rate: float) -> int:
    return int(round(rate * 1e9))


def _cell_data(seed: int, size: int, n_test: int):
    rng = RngSeed(seed, (_STREAM_DATA, size)).generator()
    A = rng.uniform(-1.0, 1.0, size=(size, size))
    X = rng.uniform(-1.0, 1.0, size=(n_test, size))
    return A, X


def run_cell(plan: ExperimentPlan, point: GridPoint, seed: int) -> ResultRow:
    """Score one (grid point, seed) cell; failures land in the status column."""
    t0 = time.perf_counter()
    mean_bits = worst_bits = math.nan
    try:
        cfg = plan.config_for(point)
        A, X = _cell_data(seed, point.size, plan.n_test)
        spec = DefectSpec(point.defect_rate, point.on_off_ratio,
                          RngSeed(seed, (_STREAM_DEFECTS, point.size, _rate_key(point.defect_rate))))
        truth = inject_defects(cfg, spec)
        combo = MethodCombo.from_name(point.combo, plan.variant, point.oc_rate)
        p = prepare(A, cfg, truth, combo, seed=RngSeed(seed, (_STREAM_PREPARE, point.size)),
                    read_noise_sigma=plan.read_noise_sigma, n_calibration=plan.n_calibration)
        report = bit_accuracy(X @ A, infer(p, X))
        mean_bits, worst_bits = report.mean_bits, report.worst_bits
        status = "ok"
        if p.pm is not None and not p.pm.converged:
            status = "ok:pm-not-converged"
    except Exception as exc:  # recorded, the sweep goes on
        log.warning("cell %s seed %d failed: %s", point, seed, exc)
        status = f"error:{type(exc).__name__}: {exc}".replace("\n", " ")
    return ResultRow(plan.sweep, point.size, point.size, point.defect_rate, point.on_off_ratio,
                     point.r_wire, point.combo, point.oc_rate, plan.variant, seed,
                     mean_bits, worst_bits, (time.perf_counter() - t0) * 1e3, status)


def aggregate(rows: list[ResultRow]) -> ResultRow:
    """Seed-averaged row of one grid point (``seed = -1``).

    ``worst_bits`` is the per-column worst of each seed, averaged over seeds.
    """
    ok = [r for r in rows if not r.status.startswith("error")]
    first = rows[0]
    failed = len(rows) - len(ok)
    status = "ok" if not failed else f"partial:{failed}/{len(rows)} failed"
    mean = float(np.mean([r.mean_bits for r in ok])) if ok else math.nan
    worst = float(np.mean([r.worst_bits for r in ok])) if ok else math.nan
    return replace(first, seed=AGGREGATE_SEED, mean_bits=mean, worst_bits=worst,
                   runtime_ms=float(sum(r.runtime_ms for r in rows)), status=status)


def run_plan(plan: ExperimentPlan, threads: int | None = None) -> list[ResultRow]:
    """All detail rows, each grid point followed by its aggregate row.

    Cells run in a thread pool; the output order never depends on it.
    """
    points = list(plan.points())
    jobs = [(p, s) for p in points for s in plan.seeds]
    n_threads = threads or plan.threads
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            details = list(pool.map(lambda job: run_cell(plan, *job), jobs))
    else:
        details = [run_cell(plan, *job) for job in jobs]
    k = len(plan.seeds)
    table = []
    for i in range(len(points)):
        chunk = details[i * k:(i + 1) * k]
        table.extend(chunk)
        table.append(aggregate(chunk))
    return table


def failed_cells(table: list[ResultRow]) -> int:
    return sum(1 for r in table if not r.is_aggregate and r.status.startswith("error"))


# ---------------------------------------------------------------- CSV


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def table_to_csv(table: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in table:
        w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    return buf.getvalue()


def emit_csv(table: list[ResultRow], path) -> Path:
    """Write ``table`` as UTF-8 CSV with LF endings and round-trippable floats."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(table_to_csv(table))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def parse_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    types = {f.name: f.type for f in fields(ResultRow)}
    out = []
    for rec in reader:
        vals = {}
        for name, raw in zip(CSV_HEADER, rec):
            t = types[name]
            vals[name] = int(raw) if t == "int" else float(raw) if t == "float" else raw
        out.append(ResultRow(**vals))
    return out


def read_csv(path) -> list[ResultRow]:
    path = Path(path)
    try:
        return parse_csv(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc


def strip_runtime(csv_text: str) -> str:
    """CSV content with the runtime column blanked, for determinism checks."""
    idx = CSV_HEADER.index("runtime_ms")
    rows = list(csv.reader(io.StringIO(csv_text)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for rec in rows:
        rec[idx] = ""
        w.writerow(rec)
    return buf.getvalue()
