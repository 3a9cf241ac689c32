"""Acceptance criteria 1-11, each at its stated tolerance.

Every criterion records one ``criterion N: PASS|FAIL ...`` line, printed in
the pytest terminal summary (and to stdout when run with ``-s``).
"""

import math
import time

import numpy as np
import pytest

from rhobh.baselines import adjusted_bh, bh, ebh, sc_lfdr
from rhobh.cli import dkw_bound, main
from rhobh.dist import (
    STD_NORMAL,
    ClosedFormNullCdf,
    EmpiricalNullCdf,
    EmpiricalNullCdfBatch,
    Normal,
    NormalLocationNullCdf,
    build_null_cdf_mc,
    sup_distance,
)
from rhobh.estimators import storey_pi
from rhobh.procedures import compute_rho, rho_bh, side_info_rho_bh, side_info_threshold_form, weighted_rho_bh, zap_variant
from rhobh.simulation import Scenario, fdp, run_replications

ALPHA = 0.05
REPORT = {}


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[n] = line
    print(line)
    assert ok, line


def _se(v):
    v = np.asarray(v, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size))


@pytest.fixture(scope="module")
def setting1():
    """Block design Setting 1 at mu=3, m=5000, 100 replicates, shared by criteria 2-4."""
    t0 = time.perf_counter()
    records, summary = run_replications(
        Scenario("univariate-blocks-1", m=5000, param=3.0),
        ["bh", "rho-bh-or", "rho-bh-dd", "rho-bh-side-dd"],
        reps=100, alpha=ALPHA, seed=20240601,
    )
    elapsed = time.perf_counter() - t0
    assert all(r.error is None for r in records)
    return {s.method: s for s in summary}, elapsed


def test_criterion_01_oracle_fdr():
    t0 = time.perf_counter()
    m, pi, reps = 2000, 0.1, 500
    rng = np.random.default_rng(101)
    results = []
    for mu_g in (-5.0, 1.0):  # g badly and mildly misspecified against f1 = N(3, 1)
        g, cdf = Normal(mu_g), NormalLocationNullCdf(mu_g)
        fdps = []
        for _ in range(reps):
            theta = rng.random(m) < pi
            x = rng.normal(size=m) + 3.0 * theta
            fdps.append(fdp(rho_bh(compute_rho(x, STD_NORMAL, g), cdf, pi, ALPHA), theta))
        results.append((mu_g, float(np.mean(fdps)), _se(fdps)))
    elapsed = time.perf_counter() - t0
    ok = all(f <= ALPHA + 3 * se for _, f, se in results) and elapsed < 60
    detail = "; ".join(f"g=N({mu:g},1) FDR={f:.4f} (bound {ALPHA + 3 * se:.4f})" for mu, f, se in results)
    record(1, ok, f"{detail}; {elapsed:.1f}s")


def test_criterion_02_dd_fdr(setting1):
    summary, elapsed = setting1
    s = summary["rho-bh-dd"]
    ok = 0.0 <= s.fdr <= 0.065 and elapsed < 600
    record(2, ok, f"rho-bh-dd FDR={s.fdr:.4f} ± {s.fdr_se:.4f} (need [0, 0.065]); "
                  f"shared Setting 1 run {elapsed:.0f}s")


def test_criterion_03_side_dd_fdr(setting1):
    s = setting1[0]["rho-bh-side-dd"]
    record(3, s.fdr <= 0.065, f"rho-bh-side-dd FDR={s.fdr:.4f} ± {s.fdr_se:.4f} (need <= 0.065)")


def test_criterion_04_power_ordering(setting1):
    summary = setting1[0]
    side, base, oracle = summary["rho-bh-side-dd"], summary["bh"], summary["rho-bh-or"]
    ok = side.power >= base.power + 0.05 and oracle.power >= side.power - 2 * side.power_se
    record(4, ok, f"power side-dd={side.power:.4f} bh={base.power:.4f} oracle={oracle.power:.4f} "
                  f"(side-dd SE {side.power_se:.4f})")


def _random_side_problem(rng, m):
    rho = rng.exponential(rng.uniform(0.05, 2.0), m)
    pi = rng.uniform(0, 0.8, m)
    eta = rng.uniform(0.02, 0.98, m)
    if rng.random() < 0.5:
        cdf = EmpiricalNullCdf(rng.exponential(1.0, 300), plus_one=bool(rng.integers(2)))
    else:
        cdf = EmpiricalNullCdfBatch(rng.exponential(rng.uniform(0.2, 3.0, (m, 1)), (m, 64)))
    return rho, pi, eta, cdf


def test_criterion_05_threshold_form_equivalence():
    rng = np.random.default_rng(505)
    mismatches, n, total_rej = 0, 0, 0
    for m, count in ((10, 80), (100, 80), (1000, 40)):
        for _ in range(count):
            rho, pi, eta, cdf = _random_side_problem(rng, m)
            alpha = rng.uniform(0.01, 0.5)
            a = side_info_rho_bh(rho, pi, eta, cdf, alpha)
            b = side_info_threshold_form(rho, pi, eta, cdf, alpha)
            mismatches += int(not np.array_equal(a.reject, b.reject))
            total_rej += a.k
            n += 1
    record(5, mismatches == 0 and n >= 200,
           f"{n} instances, {mismatches} mismatches, {total_rej} rejections in total")


def test_criterion_06_e_values():
    rng = np.random.default_rng(606)
    means = []
    for mu, sd in ((2.0, 1.0), (-1.0, 1.0), (0.5, 1.5)):
        x = rng.normal(size=100_000)
        means.append(float(np.mean(1.0 / compute_rho(x, STD_NORMAL, Normal(mu, sd)))))
    m, reps = 2000, 500
    fdps = []
    for _ in range(reps):
        x = rng.normal(size=m)
        fdps.append(fdp(ebh(1.0 / compute_rho(x, STD_NORMAL, Normal(2.0)), ALPHA), np.zeros(m)))
    fdr, se = float(np.mean(fdps)), _se(fdps)
    ok = all(abs(v - 1) <= 0.05 for v in means) and fdr <= ALPHA + 3 * se
    record(6, ok, "mean 1/rho " + ", ".join(f"{v:.4f}" for v in means) + f"; e-BH null FDR={fdr:.4f}")


def test_criterion_07_by_under_dependence():
    records, summary = run_replications(
        Scenario("custom-dependence", m=2000, param=0.8, g_mean=2.0),
        ["rho-bh", "rho-bh-by"], reps=500, alpha=ALPHA, seed=707,
    )
    by_method = {s.method: s for s in summary}
    by, plain = by_method["rho-bh-by"], by_method["rho-bh"]
    record(7, by.fdr <= ALPHA, f"rho-bh-by FDR={by.fdr:.4f} (need <= 0.05); rho-bh FDR={plain.fdr:.4f} (contrast)")


def test_criterion_08_storey_conservative():
    rng = np.random.default_rng(808)
    vals = [storey_pi(rng.random(5000), 0.5).value for _ in range(200)]
    mean = float(np.mean(vals))
    record(8, mean <= 0.01, f"mean pi-hat={mean:.5f} over 200 pure-null replicates (need <= 0.01)")


def test_criterion_09_null_cdf_oracle():
    exact = NormalLocationNullCdf(2.0)
    parts, ok = [], True
    for B in (1000, 100_000):
        errs = [sup_distance(build_null_cdf_mc(STD_NORMAL, Normal(2.0), B, seed), exact) for seed in range(40)]
        frac = float(np.mean(np.array(errs) <= dkw_bound(B)))
        ok &= frac >= 0.95
        parts.append(f"B={B}: {frac:.0%} within {dkw_bound(B):.4f} (max {max(errs):.4f})")
    record(9, ok, "; ".join(parts))


def test_criterion_10_hand_examples():
    clip = ClosedFormNullCdf(lambda t: np.minimum(np.asarray(t, dtype=float), 1.0))
    checks = {
        "BH k=2": bh([0.01, 0.02, 0.5, 0.9], 0.1).reject.tolist() == [True, True, False, False],
        "adjusted BH k=3": adjusted_bh([0.01, 0.02, 0.12, 0.9], 0.5, 0.1).k == 3,
        "e-BH k=2": ebh([10, 9, 1, 0.5], 0.5).reject.tolist() == [True, True, False, False],
        "SC k=3": sc_lfdr([0.01, 0.02, 0.10, 0.5], 0.05).reject.tolist() == [True, True, True, False],
        "weighted rho-BH m=2": weighted_rho_bh([0.1, 0.3], [1.0, 0.5], clip, 0.5, 0.1).reject.tolist()
        == [True, False],
        "ZAP k=10": zap_variant(np.r_[np.full(10, 0.001), np.full(10, 0.9)], 0.2).reject.tolist()
        == [True] * 10 + [False] * 10,
    }
    failed = [k for k, v in checks.items() if not v]
    record(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} exact" + (f"; failed {failed}" if failed else ""))


def test_criterion_11_cli_determinism(tmp_path):
    args = ["simulate", "--scenario", "univariate-blocks-1", "--param", "3", "--reps", "2", "--seed", "7",
            "--m", "1000", "--method", "bh", "--method", "rho-bh-side-dd", "--method", "clfdr"]
    codes = [main(args + ["--out-dir", str(tmp_path / d)]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("results.csv", "summary.csv"))
    record(11, codes == [0, 0] and same, "two simulate runs with identical config and seed: "
                                         + ("byte-identical CSVs" if same else "CSVs differ"))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
