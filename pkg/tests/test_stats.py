import copy
import math

import numpy as np
import pytest

from heatvar import stats
from heatvar.errors import UsageError
from heatvar.kernel import kappa_sq
from heatvar.sampler import build_increment_covariance
from heatvar.stats import (
    ExperimentSpec,
    PathCache,
    exact_correlation_with_F,
    exact_second_moment,
    independence_probe,
    mean_stderr,
    normality_test,
    run_spec,
    strip_wall_clock,
)

SEED = 4242


def spec(kind, **kw):
    kw.setdefault("master_seed", SEED)
    return ExperimentSpec(kind, **kw)


# ---------------------------------------------------------------- helpers


def test_mean_stderr_definition():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    m, se = mean_stderr(y)
    assert m == 3.5
    assert se == pytest.approx(np.std(y, ddof=1) / 2, rel=1e-15)


def test_mean_stderr_order_independent():
    y = np.random.default_rng(0).standard_normal(1000) * 1e8 + 1.0
    assert mean_stderr(y) == mean_stderr(y[::-1])


# ---------------------------------------------------------------- calibration under the null


def test_ks_calibration():
    rng = np.random.default_rng(1)
    passes = sum(normality_test(2.0 * rng.standard_normal(200), 4.0).passed for _ in range(500))
    assert abs(passes / 500 - 0.99) <= 0.02


def test_z_calibration():
    rng = np.random.default_rng(2)
    hits = 0
    for _ in range(500):
        y = rng.standard_normal(200) ** 2
        m, se = mean_stderr(y)
        hits += abs((m - 1.0) / se) <= 3.0
    assert abs(hits / 500 - 0.9973) <= 0.02


def test_independence_calibration():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(500):
        f = rng.standard_normal(500)
        rows = independence_probe([(f, rng.standard_normal(500))])
        hits += rows[0].passed
    assert hits / 500 >= 0.98


def test_ks_rejects_constant_samples():
    res = normality_test(np.zeros(300), 1.0)
    assert res.statistic >= 0.5 and not res.passed


def test_ks_input_errors():
    with pytest.raises(UsageError):
        normality_test(np.zeros(100), 1.0)
    with pytest.raises(UsageError):
        normality_test(np.zeros(300), 0.0)


def test_probe_is_linear_only():
    x = np.random.default_rng(4).standard_normal(5000)
    rows = independence_probe([(x, x * x - 1.0)])
    assert rows[0].passed  # dependent, yet uncorrelated


def test_probe_input_errors():
    with pytest.raises(UsageError):
        independence_probe([(np.zeros(600), np.zeros(599))])
    with pytest.raises(UsageError):
        independence_probe([(np.zeros(100), np.zeros(100))])


# ---------------------------------------------------------------- spec validation


def test_spec_rejects_small_M():
    with pytest.raises(UsageError):
        spec("second_moment", M=10)


def test_spec_rejects_bad_pairs_and_kinds():
    with pytest.raises(UsageError):
        spec("second_moment", pairs=[(0.5, 0.2)])
    with pytest.raises(UsageError):
        ExperimentSpec("nonsense")


def test_spec_from_json_field_paths():
    with pytest.raises(UsageError, match=r"spec.studies\[1\].bogus"):
        stats.parse_spec({"master_seed": 1, "studies": [{"kind": "kappa_constants"},
                                                         {"kind": "normality", "bogus": 1}]})
    with pytest.raises(UsageError, match="master seed"):
        stats.parse_spec({"studies": [{"kind": "normality", "M": 300}]})
    with pytest.raises(UsageError, match="schema_version"):
        stats.parse_spec({"schema_version": 99, "studies": [{"kind": "kappa_constants"}]})


def test_seed_override():
    specs = stats.parse_spec({"master_seed": 1, "studies": [{"kind": "normality", "M": 300}]}, seed=9)
    assert specs[0].master_seed == 9


# ---------------------------------------------------------------- studies at reduced scale


@pytest.fixture(scope="module")
def cache():
    return PathCache(threads=2)


def test_second_moment_empty_interval(cache):
    rep = stats.second_moment_study(spec("second_moment", n_list=(64,), pairs=[(0.5, 0.5)], M=40), cache)
    row = rep.rows[0]
    assert row["estimate"] == 0.0 and row["target"] == 0.0 and row["passed"]


def test_second_moment_centered_small(cache):
    rep = stats.second_moment_study(spec("second_moment", variants=("centered",), n_list=(256,),
                                         M=600), cache)
    row = rep.rows[0]
    assert row["stderr"] > 0
    assert abs(row["z"]) <= 3
    assert row["target"] == pytest.approx(kappa_sq("centered").kappa_sq)


def test_fourth_moment_needs_three_gaps(cache):
    with pytest.raises(UsageError):
        stats.fourth_moment_scaling(spec("fourth_moment_scaling", n_list=(64,),
                                         pairs=[(0, 0.5), (0, 1.0)], M=40), cache)
    with pytest.raises(UsageError):
        spec("fourth_moment_scaling", M=1)


def test_fourth_moment_gap_ratio(cache):
    rep = stats.fourth_moment_scaling(
        spec("fourth_moment_scaling", n_list=(256,), pairs=[(0, 0.25), (0, 0.5), (0, 1.0)], M=600), cache)
    m = [r["estimate"] for r in rep.rows if r["statistic"] == "fourth_moment"]
    # 4x gap -> about 16x fourth moment
    assert 8 < m[2] / m[0] < 32
    assert rep.passed


def test_cubic_needs_span(cache):
    with pytest.raises(UsageError):
        stats.cubic_decay_study(spec("cubic_decay", n_list=(64, 128, 256), M=40), cache)


def test_cubic_stderr_scaling(cache):
    a = stats.cubic_decay_study(spec("cubic_decay", n_list=(16, 64, 256), M=250), cache)
    b = stats.cubic_decay_study(spec("cubic_decay", n_list=(16, 64, 256), M=1000), cache)
    se_a = a.rows[0]["stderr"]
    se_b = b.rows[0]["stderr"]
    assert 0.35 < se_b / se_a < 0.7


def test_quartic_degenerate_horizon():
    rep = stats.quartic_convergence_study(spec("quartic_convergence", n_list=(4, 8, 16), horizon=0.0,
                                               pairs=[(0, 0)], M=40))
    assert all(r["estimate"] == 0.0 for r in rep.rows) and rep.passed


def test_quartic_convergence_small(cache):
    rep = stats.quartic_convergence_study(spec("quartic_convergence", n_list=(64, 256, 1024), M=300), cache)
    sups = [r["estimate"] for r in rep.rows if r["statistic"] == "sup_sq"]
    assert sups[0] > sups[-1]
    assert rep.passed


# ---------------------------------------------------------------- exact finite-n diagnostics


def test_exact_second_moment_matches_monte_carlo_signed(cache):
    # the finite-n target differs from the limit; Monte Carlo must track the finite-n value
    n = 256
    s = spec("second_moment", variants=("signed",), n_list=(n,), M=4000, pairs=[(0, 1.0), (0.25, 0.75)])
    rep = stats.second_moment_study(s, cache)
    for row in rep.rows:
        assert abs(row["estimate"] - row["finite_n_exact"]) <= 3 * row["stderr"]
        assert row["finite_n_exact"] > row["target"]


@pytest.mark.parametrize("variant,closed", [
    ("centered", lambda c: 2 * np.sum(c * c)),
    ("rademacher", lambda c: 3 * np.sum(np.diagonal(c) ** 2)),
])
def test_exact_second_moment_closed_forms(variant, closed):
    cov = build_increment_covariance(32)
    assert exact_second_moment(cov, variant, 0, 1) == pytest.approx(closed(cov.entries), rel=1e-13)


def test_exact_signed_moment_converges_to_kappa():
    k = kappa_sq("signed").kappa_sq
    gaps = [exact_second_moment(build_increment_covariance(n), "signed", 0, 1) - k for n in (64, 256, 1024)]
    # bias is positive and roughly halves per 4x in n
    assert all(g > 0 for g in gaps)
    assert 1.6 < gaps[0] / gaps[1] < 2.4 and 1.6 < gaps[1] / gaps[2] < 2.4


def test_exact_correlation_zero_for_even_families():
    cov = build_increment_covariance(64)
    for v in ("centered", "alternating", "rademacher"):
        assert exact_correlation_with_F(cov, v, 1.0, 0.5) == 0.0
    assert exact_correlation_with_F(cov, "signed", 1.0, 1.0) > 0.1


def test_exact_correlation_matches_monte_carlo(cache):
    n = 256
    s = spec("independence", variants=("signed",), n_list=(n,), M=4000,
             options={"probe_times": [0.5, 1.0]})
    rep = stats.independence_study(s, cache)
    for row in rep.rows:
        assert abs(row["estimate"] - row["finite_n_exact"]) <= 4 * row["stderr"]


# ---------------------------------------------------------------- runner


SMALL_DOC = {
    "schema_version": 1,
    "master_seed": 99,
    "studies": [
        {"id": "k", "criterion": 2, "kind": "kappa_constants", "variants": ["centered"]},
        {"id": "m2", "criterion": 5, "kind": "second_moment", "variants": ["rademacher", "alternating"],
         "n": 128, "M": 300},
        {"id": "ind", "criterion": 7, "kind": "independence", "variants": ["centered"], "n": 128,
         "M": 500},
        {"id": "mid", "criterion": 10, "kind": "midpoint_identity", "n": 64, "M": 30},
    ],
}


def test_run_spec_deterministic_across_threads():
    a = run_spec(copy.deepcopy(SMALL_DOC), threads=1)
    b = run_spec(copy.deepcopy(SMALL_DOC), threads=6)
    assert strip_wall_clock(a) == strip_wall_clock(b)
    assert set(a["criteria"]) == {"2", "5", "7", "10"}
    assert a["schema_version"] == stats.SCHEMA_VERSION
    assert "wall_clock_seconds" in a and "wall_clock_seconds" not in strip_wall_clock(a)


def test_report_rows_have_required_fields():
    rep = run_spec(copy.deepcopy(SMALL_DOC))
    rows = [r for st in rep["studies"] if st["kind"] == "second_moment" for r in st["rows"]]
    for r in rows:
        for key in ("estimate", "stderr", "target", "z", "passed"):
            assert key in r
        assert r["passed"] == (abs(r["z"]) <= 3.0)
    assert math.isfinite(rep["wall_clock_seconds"])
