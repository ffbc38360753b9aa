import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatvar.errors import AssumptionCheckError, DomainError, UsageError
from heatvar.kernel import k_function
from heatvar.oracle import (
    QuadSpec,
    bivariate_expectation,
    check_assumption31,
    endpoint_expectation,
    expectation,
    increment_correlations,
    moment33,
    moment44,
    quadruple_expectation,
    register_tag,
)
from heatvar.variations import HFamily

RHOS = [-0.99, -0.9, -0.5, -0.1, 0.0, 0.1, 0.5, 0.9, 0.99]


def test_quadspec_mass_and_validation():
    assert abs(QuadSpec().gauss_mass() - 1.0) < 1e-12
    with pytest.raises(UsageError):
        QuadSpec(order=4)


@pytest.mark.parametrize("tag,value", [("one", 1), ("x", 0), ("x2", 1), ("x4", 3), ("x2m1", 0),
                                       ("sq_signed", 0), ("abs", math.sqrt(2 / math.pi))])
def test_one_dimensional_moments(tag, value):
    assert expectation(tag) == pytest.approx(value, abs=1e-13)


@pytest.mark.parametrize("rho", RHOS)
def test_closed_forms_against_quadrature(rho):
    assert abs(bivariate_expectation("x2m1", "x2m1", rho) - 2 * rho * rho) < 1e-10
    assert abs(bivariate_expectation("sq_signed", "sq_signed", rho) - k_function(rho)) < 1e-8
    assert abs(bivariate_expectation("x4", "x4", rho) - moment44(rho)) < 1e-9
    assert abs(bivariate_expectation("x3", "x3", rho) - moment33(rho)) < 1e-9


def test_bivariate_examples():
    assert bivariate_expectation("sq_signed", "sq_signed", 0.0) == pytest.approx(0.0, abs=1e-15)
    assert abs(bivariate_expectation("sq_signed", "sq_signed", 0.5) - k_function(0.5)) < 1e-8


def test_bivariate_endpoint_error():
    with pytest.raises(DomainError):
        bivariate_expectation("x", "x", 1.0)
    assert endpoint_expectation("sq_signed", "sq_signed", 1) == pytest.approx(3.0, abs=1e-12)
    assert endpoint_expectation("sq_signed", "sq_signed", -1) == pytest.approx(-3.0, abs=1e-12)
    assert endpoint_expectation("x4", "x4", 1) == pytest.approx(105.0, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.999, 0.999))
def test_order_doubling_stable(rho):
    fine = QuadSpec(order=400)
    for tags in (("x4", "x4"), ("sq_signed", "sq_signed"), ("x3", "x2m1")):
        a = bivariate_expectation(*tags, rho)
        b = bivariate_expectation(*tags, rho, fine)
        assert abs(a - b) < 1e-10


def test_moment_examples():
    assert moment44(0) == 9 and moment44(1) == 105
    assert moment33(0) == 0 and moment33(1) == 15
    assert abs(moment44(0.3) - bivariate_expectation("x4", "x4", 0.3)) < 1e-9
    assert abs(moment33(-0.4) - bivariate_expectation("x3", "x3", -0.4)) < 1e-9
    with pytest.raises(DomainError):
        moment44(1.5)


# ---------------------------------------------------------------- four dimensions


def test_quadruple_examples():
    assert abs(quadruple_expectation(["x2m1"] * 4, np.eye(4))) < 1e-12
    c = np.eye(4)
    c[0, 1] = c[1, 0] = c[2, 3] = c[3, 2] = 1.0
    assert quadruple_expectation(["x2m1"] * 4, c) == pytest.approx(4.0, abs=1e-9)


def test_quadruple_rejects_indefinite():
    c = np.full((4, 4), -0.5)
    np.fill_diagonal(c, 1.0)
    with pytest.raises(DomainError):
        quadruple_expectation(["x"] * 4, c)


def test_quadruple_matches_isserlis():
    c = increment_correlations([1, 2, 4, 7], 1 / 64)
    # E X1 X2 X3 X4 = c12 c34 + c13 c24 + c14 c23
    exact = c[0, 1] * c[2, 3] + c[0, 2] * c[1, 3] + c[0, 3] * c[1, 2]
    assert abs(quadruple_expectation(["x"] * 4, c) - exact) < 1e-12
    # E X1^2 X2^2 = 1 + 2 c12^2 with the other two factors constant
    assert abs(quadruple_expectation(["x2", "x2", "one", "one"], c) - (1 + 2 * c[0, 1] ** 2)) < 1e-10


def test_quadruple_permutation_symmetry():
    c = increment_correlations([1, 3, 4, 9], 1 / 128)
    tags = ["x2m1", "x", "x2", "x3"]
    base = quadruple_expectation(tags, c)
    for perm in itertools.permutations(range(4)):
        p = list(perm)
        assert abs(quadruple_expectation([tags[i] for i in p], c[np.ix_(p, p)]) - base) < 1e-12


def test_quadruple_decay_in_gap():
    vals = []
    for m in (1, 2, 4, 8):
        c = increment_correlations([1, 1 + m, 1 + 2 * m, 1 + 4 * m], 1 / 4096)
        vals.append(abs(quadruple_expectation(["x2m1"] * 4, c)))
    assert all(a > b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- family checks


def test_assumption_centered():
    rep = check_assumption31(HFamily.of("centered"), RHOS)
    assert rep.mean_abs < 1e-10
    assert rep.fitted_L == pytest.approx(2 * 0.99, rel=1e-9)
    assert rep.derivative_lipschitz == pytest.approx(2.0)
    assert rep.passed


def test_assumption_signed():
    rep = check_assumption31(HFamily.of("signed"), RHOS)
    assert rep.mean_abs < 1e-10
    assert rep.fitted_L <= 5.0
    assert rep.passed


@pytest.mark.parametrize("variant", ["alternating", "rademacher"])
def test_assumption_other_variants(variant):
    fam = HFamily.rademacher(3, 10) if variant == "rademacher" else HFamily.of(variant)
    rep = check_assumption31(fam, RHOS)
    assert rep.mean_zero and rep.passed


def test_assumption_flags_non_lipschitz_derivative():
    register_tag("abs_pow_1p5", lambda x: np.abs(x) ** 1.5,
                 lambda x: 1.5 * np.sign(x) * np.sqrt(np.abs(x)), kinks=(0.0,))
    with pytest.raises(AssumptionCheckError) as info:
        check_assumption31(HFamily.custom("abs_pow_1p5"), [0.5])
    assert abs(info.value.location) < 1e-3


def test_assumption_reports_nonzero_mean():
    rep = check_assumption31(HFamily.custom("x2", lipschitz=2.0), [0.5])
    assert not rep.mean_zero and not rep.passed


def test_assumption_grid_validation():
    with pytest.raises(UsageError):
        check_assumption31(HFamily.of("centered"), [])
    with pytest.raises(UsageError):
        check_assumption31(HFamily.of("centered"), [1.0])
