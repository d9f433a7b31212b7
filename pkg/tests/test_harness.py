import math

import numpy as np
import pytest

from xbarmit import harness
from xbarmit.harness import (
    CSV_HEADER,
    ExperimentPlan,
    ResultRow,
    build_plan,
    emit_csv,
    parse_csv,
    read_csv,
    run_plan,
    strip_runtime,
    table_to_csv,
)


def small_plan(**kw):
    base = dict(sweep="single", sizes=(8,), defect_rates=(0.1,), combos=("Baseline",), seeds=(0, 1),
                n_test=32, n_calibration=64)
    base.update(kw)
    return ExperimentPlan(**base)


def test_single_point_two_seeds_counts():
    table = run_plan(small_plan())
    assert len(table) == 3
    assert [r.seed for r in table] == [0, 1, -1]
    agg = table[-1]
    assert agg.is_aggregate and agg.status == "ok"
    assert agg.mean_bits == pytest.approx(np.mean([r.mean_bits for r in table[:2]]))


def test_grid_coverage():
    plan = small_plan(sizes=(4, 8), combos=("Baseline", "RS"), oc_rates=(0.5, 1.0), seeds=(0, 1, 2))
    table = run_plan(plan)
    n_grid = 2 * 2 * 2
    assert len(table) == n_grid * 3 + n_grid
    assert sum(r.is_aggregate for r in table) == n_grid


def test_plan_validation():
    with pytest.raises(ValueError):
        small_plan(seeds=(0, 0))
    with pytest.raises(ValueError):
        small_plan(sizes=())
    with pytest.raises(ValueError):
        small_plan(combos=("Nope",))
    with pytest.raises(ValueError):
        small_plan(sweep="bogus")


def test_combos_share_matrix_inputs_and_defects():
    # RS on a defect-free array is a no-op, so both combos must score identically
    plan = small_plan(defect_rates=(0.0,), combos=("Baseline", "RS"))
    table = run_plan(plan)
    assert table[0].mean_bits == table[3].mean_bits
    assert table[1].mean_bits == table[4].mean_bits


def test_failures_are_recorded_and_run_continues(monkeypatch):
    real = harness.prepare

    def flaky(A, cfg, truth, combo, seed, **kw):
        if combo.rs:
            raise RuntimeError("boom, with comma")
        return real(A, cfg, truth, combo, seed=seed, **kw)

    monkeypatch.setattr(harness, "prepare", flaky)
    table = run_plan(small_plan(combos=("Baseline", "RS")))
    assert harness.failed_cells(table) == 2
    assert table[3].status.startswith("error:RuntimeError")
    assert math.isnan(table[3].mean_bits)
    assert table[5].status == "partial:2/2 failed"
    assert table[2].status == "ok"
    back = parse_csv(table_to_csv(table))
    assert back[3].status == table[3].status


def test_csv_round_trip_and_format(tmp_path):
    table = run_plan(small_plan(on_off_ratios=(1.75 / 9,)))
    path = emit_csv(table, tmp_path / "out" / "r.csv")
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8").splitlines()[0] == ",".join(CSV_HEADER)
    back = read_csv(path)
    assert len(back) == len(table)
    for a, b in zip(table, back):
        for name in CSV_HEADER:
            va, vb = getattr(a, name), getattr(b, name)
            assert va == vb or (isinstance(va, float) and math.isnan(va) and math.isnan(vb))
    assert back[-1].seed == -1


def test_empty_table_is_header_only(tmp_path):
    path = emit_csv([], tmp_path / "e.csv")
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"
    assert read_csv(path) == []


def test_io_errors_carry_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_csv([], blocker / "sub" / "r.csv")
    with pytest.raises(OSError, match="missing.csv"):
        read_csv(tmp_path / "missing.csv")


def test_threads_do_not_change_results():
    plan = small_plan(combos=("Baseline", "RS+OC+PM"), seeds=(0, 1, 2))
    a = strip_runtime(table_to_csv(run_plan(plan)))
    b = strip_runtime(table_to_csv(run_plan(plan, threads=4)))
    assert a == b


def test_plan_file_precedence(tmp_path):
    cfg = tmp_path / "plan.cfg"
    cfg.write_text("# comment\nsizes = 8, 16\nseeds = 3,4\non_off_ratios = 1.75/9, 1\nn_test = 64\n"
                   "tie_parasitics = false\n")
    plan = build_plan("vmm-sweep", "desk", cfg, seeds=(9,))
    assert plan.sizes == (8, 16)
    assert plan.seeds == (9,)  # CLI beats file
    assert plan.on_off_ratios == (1.75 / 9, 1.0)
    assert plan.n_test == 64 and plan.tie_parasitics is False
    assert plan.defect_rates == (0.02, 0.05, 0.10)  # profile default
    with_section = tmp_path / "s.cfg"
    with_section.write_text("[plan]\nsizes = 4\n")
    assert build_plan("single", config_path=with_section).sizes == (4,)
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    with pytest.raises(ValueError):
        build_plan("single", config_path=bad)


def test_profiles_cover_every_sweep():
    for sweep in harness.SWEEPS:
        desk = build_plan(sweep, "desk")
        full = build_plan(sweep, "full")
        assert max(desk.sizes) <= 64
        assert max(full.sizes) >= max(desk.sizes)
    with pytest.raises(ValueError):
        harness.profile_defaults("single", "huge")


def test_tied_parasitics():
    plan = small_plan(r_wires=(2.5,))
    point = next(plan.points())
    cfg = plan.config_for(point)
    assert cfg.r_in == cfg.r_out == cfg.r_wire == 2.5
    cfg = small_plan(r_wires=(2.5,), tie_parasitics=False, r_in=0.1, r_out=0.2).config_for(point)
    assert (cfg.r_in, cfg.r_out) == (0.1, 0.2)


def test_rwire_trend_baseline_no_defects():
    plan = small_plan(sweep="rwire-sweep", sizes=(16,), defect_rates=(0.0,), r_wires=(10.0, 1.0, 0.1),
                      n_test=64)
    agg = [r for r in run_plan(plan) if r.is_aggregate]
    bits = [r.mean_bits for r in agg]
    assert bits[0] <= bits[1] <= bits[2]


def test_result_row_aggregate_flag():
    row = ResultRow("single", 2, 2, 0.1, 1.0, 1.0, "RS", 1.0, "B", -1, 1.0, 1.0, 0.0, "ok")
    assert row.is_aggregate
