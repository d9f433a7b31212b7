"""Command-line entry point: ``python -m xbarmit <sweep> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .ann import accuracy_csv, evaluate_on_crossbar, train_toy, zero_parasitic_config
from .core import CrossbarConfig
from .harness import SWEEPS, read_plan_file
from .pipeline import COMBO_NAMES

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xbarmit", description="Crossbar defect-mitigation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SWEEPS + ("ann-demo",):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value plan file")
        p.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
        p.add_argument("--seeds", type=int, help="use seeds 0..N-1")
        p.add_argument("--profile", choices=("desk", "full"), default="desk")
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc


def run_sweep(args) -> int:
    seeds = tuple(range(args.seeds)) if args.seeds else None
    plan = harness.build_plan(args.command, args.profile, args.config,
                              seeds=seeds, threads=args.threads)
    out = args.out if args.out is not None else (Path(plan.out) if plan.out else None)
    table = harness.run_plan(plan)
    _write(harness.table_to_csv(table), out)
    failed = harness.failed_cells(table)
    if failed:
        logging.getLogger("xbarmit").error("%d of %d cells failed", failed,
                                           len(table) - len(list(plan.points())))
        return EXIT_PARTIAL
    return EXIT_OK


def run_ann_demo(args) -> int:
    """Accuracy of the toy MLP on defective crossbars.

    Plan keys: ``defect_rates``, ``combos``, ``seeds``, ``train_seed``,
    ``r_wire`` (0 gives the zero-parasitic profile) and ``beta``.
    """
    opts = read_plan_file(args.config, {"train_seed": int, "r_wire": float, "beta": float}) if args.config else {}
    full = args.profile == "full"
    rates = opts.get("defect_rates", (0.0, 0.02, 0.05, 0.10, 0.15, 0.20) if full else (0.0, 0.05, 0.10, 0.20))
    combos = opts.get("combos", COMBO_NAMES)
    seeds = tuple(range(args.seeds)) if args.seeds else opts.get("seeds", (0, 1, 2, 3, 4))
    known = {"defect_rates", "combos", "seeds", "out", "train_seed", "r_wire", "beta"}
    if set(opts) - known:
        raise ValueError(f"unsupported ann-demo keys: {sorted(set(opts) - known)}")
    train_seed = opts.get("train_seed", 0)
    r_wire = opts.get("r_wire", 0.0)
    beta = opts.get("beta", 0.0)
    model, data = train_toy(train_seed)
    sizes = max(W.shape[0] for W in model.weights), max(W.shape[1] for W in model.weights)
    cfg = (zero_parasitic_config(*sizes, beta=beta) if r_wire == 0 else
           CrossbarConfig(*sizes, r_wire=r_wire, r_in=r_wire, r_out=r_wire, beta=beta))
    rows = []
    for rate in rates:
        rows.extend(evaluate_on_crossbar(model, data, cfg, rate, combos, seeds))
    out = args.out if args.out is not None else (Path(opts["out"]) if opts.get("out") else None)
    _write(accuracy_csv(rows), out)
    clean = model.accuracy(data.x_test, data.y_test)
    logging.getLogger("xbarmit").info("software accuracy %.4f; mean crossbar accuracy %.4f",
                                      clean, float(np.mean([r[3] for r in rows])))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "ann-demo":
            return run_ann_demo(args)
        return run_sweep(args)
    except Exception as exc:
        print(f"xbarmit: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
