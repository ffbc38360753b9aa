"""Acceptance gate: the bundled suite, one test per criterion.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
Each criterion also gets a PASS/FAIL line in the terminal summary,
taken from the report rather than from the pytest outcome, so the two
signed-squares cases known to fail at n = 4096 show up as FAIL there.
"""

import math
import sys

import pytest

from heatvar import stats
from heatvar.cli import load_spec
from heatvar.kernel import kappa_sq

Z = 3.0


@pytest.fixture(scope="module")
def report():
    return stats.run_spec(load_spec("acceptance"), threads=1)


@pytest.fixture(scope="module")
def report_parallel():
    return stats.run_spec(load_spec("acceptance"), threads=8)


@pytest.fixture(scope="module", autouse=True)
def summary_lines(request, report, report_parallel):
    yield
    from conftest import ACCEPTANCE_LINES

    lines = request.config.stash[ACCEPTANCE_LINES]
    lines.extend(stats.criterion_lines(report))
    same = stats.strip_wall_clock(report) == stats.strip_wall_clock(report_parallel)
    lines.append(f"criterion 12 determinism (threads 1 vs 8): {'PASS' if same else 'FAIL'}")
    lines.append(f"overall: {'PASS' if report['passed'] and same else 'FAIL'}")


def study(report, criterion):
    (st,) = [s for s in report["studies"] if s["criterion"] == criterion]
    return st


def rows(report, criterion, **match):
    return [r for r in study(report, criterion)["rows"] if all(r.get(k) == v for k, v in match.items())]


# ---------------------------------------------------------------- 1, 2: exact quantities


def test_c01_kernel_exactness(report):
    got = {r["statistic"]: r["estimate"] for r in rows(report, 1)}
    assert got["uniform_vs_cross_max_rel"] < 1e-12
    assert got["variance_vs_cov_max_rel"] < 1e-12
    assert got["K_vs_quadrature_max_abs"] < 1e-8
    assert rows(report, 1, statistic="K_vs_quadrature_max_abs")[0]["rho_count"] == 21
    assert study(report, 1)["passed"]


def test_c02_kappa_constants(report):
    got = {r["variant"]: r for r in rows(report, 2)}
    assert got["rademacher"]["estimate"] == 6 / math.pi
    signed = got["signed"]
    assert 0 < signed["estimate"] < 6 / math.pi
    assert signed["series"] < 1.5 and signed["series"] <= signed["series_bound"]
    for v in ("centered", "alternating"):
        assert got[v]["truncation_error"] < 1e-10
        assert abs(got[v]["refined"] - got[v]["estimate"]) <= 2e-10
    assert study(report, 2)["passed"]


# ---------------------------------------------------------------- 3, 4: sampler and quartic variation


def test_c03_sampler_law(report):
    got = {r["statistic"]: r["estimate"] for r in rows(report, 3)}
    assert got["cov_max_abs_z"] <= 4.0
    assert got["max_abs_skewness"] < 0.05
    assert got["max_abs_excess_kurtosis"] < 0.1
    assert study(report, 3)["passed"]


def test_c04_quartic_variation(report):
    sups = [r["estimate"] for r in rows(report, 4, statistic="sup_sq")]
    assert [r["n"] for r in rows(report, 4, statistic="sup_sq")] == [256, 1024, 4096]
    assert sups[0] > sups[1] > sups[2]
    (v,) = rows(report, 4, statistic="mean_V")
    assert v["n"] == 4096 and v["target"] == pytest.approx(6 / math.pi, rel=1e-15)
    assert abs(v["z"]) <= Z
    assert study(report, 4)["passed"]


# ---------------------------------------------------------------- 5: variance limits

OTHER = ["rademacher", "centered", "alternating"]


@pytest.mark.parametrize("variant", OTHER)
def test_c05_variance_limits(report, variant):
    rs = rows(report, 5, variant=variant)
    assert {(r["s"], r["t"]) for r in rs} == {(0.0, 1.0), (0.25, 0.75)}
    k = kappa_sq(variant).kappa_sq
    for r in rs:
        assert r["n"] == 4096
        assert r["target"] == pytest.approx(k * (r["t"] - r["s"]), rel=1e-12)
        assert abs(r["z"]) <= Z


@pytest.mark.xfail(strict=False, reason="signed squares carry an O(n^-1/2) finite-n bias of about "
                                        "2 stderr on [0,1] and 3.7 stderr on [1/4,3/4] at n = 4096")
def test_c05_variance_limits_signed(report):
    for r in rows(report, 5, variant="signed"):
        assert abs(r["z"]) <= Z


def test_c05_signed_tracks_exact_finite_n_moment(report):
    # the Monte Carlo mean agrees with the exact finite-n second moment, which sits above the limit
    for r in rows(report, 5, variant="signed"):
        assert abs(r["estimate"] - r["finite_n_exact"]) <= Z * r["stderr"]
        assert r["finite_n_exact"] > r["target"]


# ---------------------------------------------------------------- 6, 7: normality and independence


@pytest.mark.parametrize("variant", ["rademacher", "signed", "centered", "alternating"])
def test_c06_normality(report, variant):
    (r,) = rows(report, 6, variant=variant)
    assert r["n"] == 4096 and r["alpha"] == 0.01
    assert r["pvalue"] >= 0.01


@pytest.mark.parametrize("variant", OTHER)
def test_c07_independence(report, variant):
    rs = rows(report, 7, variant=variant)
    assert sorted(r["r"] for r in rs) == [0.25, 0.5, 1.0]
    for r in rs:
        assert abs(r["estimate"]) <= 0.1


@pytest.mark.xfail(strict=True, reason="the exact finite-n correlation of signed squares with F(r) "
                                       "is 0.108 at r = 1/2 and 0.247 at r = 1 for n = 4096")
def test_c07_independence_signed(report):
    for r in rows(report, 7, variant="signed"):
        assert abs(r["estimate"]) <= 0.1


def test_c07_signed_tracks_exact_finite_n_correlation(report):
    for r in rows(report, 7, variant="signed"):
        assert abs(r["estimate"] - r["finite_n_exact"]) <= Z * r["stderr"]


# ---------------------------------------------------------------- 8 to 11


def test_c08_cubic_variation(report):
    (slope,) = rows(report, 8, statistic="slope")
    assert -0.65 <= slope["estimate"] <= -0.35
    (mean,) = [r for r in rows(report, 8, statistic="mean") if r["n"] == 4096]
    assert abs(mean["z"]) <= 4
    assert study(report, 8)["passed"]


@pytest.mark.parametrize("variant", ["rademacher", "signed", "centered", "alternating"])
def test_c09_fourth_moment_scaling(report, variant):
    (slope,) = rows(report, 9, variant=variant, statistic="slope")
    assert slope["n"] == 2048
    assert 1.7 <= slope["estimate"] <= 2.3
    gaps = [r["t"] - r["s"] for r in rows(report, 9, variant=variant, statistic="fourth_moment")]
    assert gaps == [0.125, 0.25, 0.5, 1.0]


def test_c10_midpoint_identity(report):
    got = {r["statistic"]: r for r in rows(report, 10)}
    assert got["max_rel_residual_even"]["paths"] == 100
    assert got["max_rel_residual_even"]["estimate"] < 1e-10
    assert study(report, 10)["passed"]


@pytest.mark.parametrize("variant", ["rademacher", "signed", "centered", "alternating"])
def test_c11_assumption_checks(report, variant):
    (r,) = rows(report, 11, variant=variant)
    assert r["mean_abs"] < 1e-10
    assert r["passed"]
    if variant == "signed":
        assert r["fitted_L"] <= 5.0


# ---------------------------------------------------------------- 12


def test_c12_determinism(report, report_parallel):
    assert stats.strip_wall_clock(report) == stats.strip_wall_clock(report_parallel)
    assert report["master_seed"] == report_parallel["master_seed"]


if __name__ == "__main__":
    one = stats.run_spec(load_spec("acceptance"), threads=1)
    eight = stats.run_spec(load_spec("acceptance"), threads=8)
    for line in stats.criterion_lines(one):
        print(line)
    same = stats.strip_wall_clock(one) == stats.strip_wall_clock(eight)
    print(f"criterion 12 determinism (threads 1 vs 8): {'PASS' if same else 'FAIL'}")
    sys.exit(0 if one["passed"] and same else 1)
