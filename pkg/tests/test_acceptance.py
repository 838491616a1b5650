"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) and then
asserts the same condition. The three training experiments are marked slow;
together they take roughly 80 minutes on one CPU core.
"""
import time
from statistics import mean

import pytest
import torch

import test_constraints as tc
import test_evaluation as te
import test_geometry as tg
import test_matching as tm
from contexthoi import experiments
from contexthoi.config import RunConfig
from contexthoi.engine import train
from contexthoi.geometry import box_iou, generalized_box_iou
from contexthoi.synthetic import SyntheticSpec, generate_synthetic

RESULTS: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> None:
    RESULTS.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


def run_checks(checks) -> tuple[bool, str]:
    failures = []
    for fn in checks:
        try:
            fn()
        except AssertionError as exc:
            failures.append(f"{fn.__name__}: {exc}")
    return not failures, "; ".join(failures)


def test_gradient_oracle_suite():
    checks = [tg.TestProperties().test_gradient_against_finite_differences,
              tc.test_feature_constraint_gradient, tc.test_region_constraint_gradient,
              tc.test_instance_constraint_gradient_including_tau, tm.test_composite_loss_gradient_oracle]
    start = time.perf_counter()
    ok, why = run_checks(checks)
    secs = time.perf_counter() - start
    record("gradient oracle suite", ok and secs < 60,
           f"GIoU, L_FC, L_RC, L_IC (with tau), composite vs central differences, rel err < 1e-4; "
           f"{secs:.1f} s (limit 60) {why}")


def test_geometry_oracle():
    ok, why = run_checks([tg.TestProperties().test_monte_carlo_oracle])
    d = lambda *x: torch.tensor(x, dtype=torch.float64)  # noqa: E731
    fixtures = [
        (generalized_box_iou(d(0, 0, 2, 2), d(1, 1, 3, 3)).item(), -5 / 63),
        (generalized_box_iou(d(0, 0, 1, 1), d(2, 2, 3, 3)).item(), -7 / 9),
        (box_iou(d(0, 0, 2, 2), d(1, 1, 3, 3)).item(), 1 / 7),
    ]
    worst = max(abs(a - b) for a, b in fixtures)
    record("geometry oracle", ok and worst < 1e-6,
           f"100 pairs within 0.01 of 512x512 raster; fixtures max err {worst:.1e} {why}")


def test_matching_oracle():
    ok, why = run_checks([tm.test_assign_matches_brute_force, tm.test_assign_integer_costs_exact_total])
    record("matching oracle", ok, f"100 random matrices up to 6x6 equal the exhaustive minimum {why}")


def test_loss_bounds():
    ok, why = run_checks([tc.test_bounds_random_1000, tc.TestInstanceConstraint().test_coincident_maximum,
                          tc.TestRegionConstraint().test_identical])
    record("loss bounds", ok, f"1000 random inputs in range; L_IC=2 and L_RC=1 extrema exact {why}")


def test_descent_direction():
    start = time.perf_counter()
    ok, why = run_checks([tc.test_descent_pushes_context_box_off_instance])
    secs = time.perf_counter() - start
    record("descent direction", ok and secs < 10,
           f"GIoU strictly decreasing over 50 steps, final distance < 4; {secs:.2f} s (limit 10) {why}")


def test_map_harness_fixtures(tmp_path):
    checks = [te.test_single_hit, te.test_ranked_miss, te.test_iou_threshold_rejection,
              lambda: te.test_subset_file_restricts(tmp_path)]
    checks[-1].__name__ = "test_subset_file_restricts"
    ok, why = run_checks(checks)
    record("mAP harness fixtures", ok, f"AP 1.0 / 0.5 / IoU 1/7 rejection exact; 659-id subset counts {why}")


def test_determinism(tmp_path):
    data = generate_synthetic(SyntheticSpec(num_images=8, seed=11))
    streams = []
    for run in ("a", "b"):
        cfg = RunConfig.from_profile("desk")
        cfg.optim.epochs = 3
        cfg.output_dir = str(tmp_path / run)
        streams.append(train(cfg, data).metrics_path.read_bytes())
    n = len(streams[0].splitlines())
    record("determinism", streams[0] == streams[1] and n > 0,
           f"two seeded desk runs, metrics streams byte-identical ({n} records)")


@pytest.mark.slow
def test_overfit(tmp_path):
    r = experiments.overfit(out_root=tmp_path)
    ratio = r["loss_hoi_final"] / r["loss_hoi_initial"]
    ok = r["map"] >= 0.9 and ratio < 0.1 and r["seconds"] < 600
    record("overfit", ok, f"mAP {r['map']:.3f} (>= 0.9), L_HOI {r['loss_hoi_initial']:.2f} -> "
                          f"{r['loss_hoi_final']:.3f} ({100 * ratio:.1f}% < 10%), {r['seconds']:.0f} s (< 600)")


@pytest.mark.slow
def test_context_matters(tmp_path):
    start = time.perf_counter()
    rows, passed = [], 0
    for seed in range(3):
        r = experiments.context_matters(seed, out_root=tmp_path)
        ok = r["full"] >= experiments.CHANCE + 0.30 and abs(r["instance_only"] - experiments.CHANCE) <= 0.10
        passed += ok
        rows.append(f"seed {seed}: full {r['full']:.2f} instance-only {r['instance_only']:.2f}")
    secs = time.perf_counter() - start
    record("context matters", passed >= 2 and secs < 1800,
           f"{passed}/3 seeds pass (full >= 0.55, instance-only within 0.10 of 0.25); "
           f"{'; '.join(rows)}; {secs / 60:.1f} min (< 30)")


@pytest.mark.slow
def test_ablation_monotonicity(tmp_path):
    per_seed = [experiments.ablation(seed, out_root=tmp_path) for seed in range(3)]
    means = {k: mean(s[k] for s in per_seed) for k in experiments.ABLATION_ROWS}
    base, ctx, full = (means[k] for k in experiments.ABLATION_ROWS)
    ok = base <= ctx <= full and full > max(base, ctx)
    record("ablation monotonicity", ok,
           f"mean test mAP instance-only {base:.4f} <= context {ctx:.4f} <= full {full:.4f} (strictly highest); "
           f"per seed {[[round(s[k], 4) for k in experiments.ABLATION_ROWS] for s in per_seed]}")
