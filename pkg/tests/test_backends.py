import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heatvar import _backend, _pykernels
from heatvar.sampler import SeedSpec, build_increment_covariance, factorize, sample_batch

compiled = pytest.mark.skipif("compiled" not in _backend.available(), reason="extension not built")


@pytest.fixture
def restore_backend():
    previous = _backend.current()
    yield
    _backend.use(previous)


def test_default_prefers_compiled():
    expected = "compiled" if "compiled" in _backend.available() else "python"
    assert _backend.current() == expected


def test_unknown_backend(restore_backend):
    with pytest.raises(ValueError):
        _backend.use("fortran")


def test_python_cumsum_recovers_cancellation():
    x = np.array([[1e16, 1.0, -1e16, 3.0, 1e-3]])
    out = np.empty_like(x)
    _pykernels.compensated_cumsum(x, out)
    for j in range(x.shape[1]):
        assert out[0, j] == pytest.approx(math.fsum(x[0, : j + 1]), rel=4e-16)


@compiled
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 80)),
              elements=st.floats(-1e12, 1e12, allow_nan=False)))
def test_cumsum_bit_identical(terms):
    from heatvar import _ckernels
    a = np.empty_like(terms)
    b = np.empty_like(terms)
    _ckernels.compensated_cumsum(np.ascontiguousarray(terms), a)
    _pykernels.compensated_cumsum(terms, b)
    assert a.tobytes() == b.tobytes()


@compiled
@pytest.mark.parametrize("n,m", [(1, 1), (7, 3), (33, 40), (200, 65)])
def test_lower_apply_agrees(n, m):
    from heatvar import _ckernels
    rng = np.random.default_rng(n)
    L = np.tril(rng.standard_normal((n, n)))
    z = rng.standard_normal((m, n))
    a = np.empty_like(z)
    b = np.empty_like(z)
    _ckernels.lower_apply(L, z, a)
    _pykernels.lower_apply(L, z, b)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.allclose(a, z @ L.T, rtol=1e-12, atol=1e-12)


@compiled
def test_compiled_ignores_upper_triangle():
    from heatvar import _ckernels
    rng = np.random.default_rng(0)
    L = np.tril(rng.standard_normal((10, 10)))
    z = rng.standard_normal((4, 10))
    a = np.empty_like(z)
    _ckernels.lower_apply(L, z, a)
    junk = L + np.triu(np.full((10, 10), np.nan), 1)
    b = np.empty_like(z)
    _ckernels.lower_apply(junk, z, b)
    assert a.tobytes() == b.tobytes()


@compiled
def test_samples_agree_across_backends(restore_backend):
    f = factorize(build_increment_covariance(128))
    _backend.use("compiled")
    a = sample_batch(f, SeedSpec(3), 20)
    _backend.use("python")
    b = sample_batch(f, SeedSpec(3), 20)
    assert np.allclose(a.cumulative, b.cumulative, rtol=0, atol=1e-13)


@compiled
def test_shape_errors():
    from heatvar import _ckernels
    with pytest.raises(ValueError):
        _ckernels.lower_apply(np.eye(3), np.zeros((2, 4)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        _pykernels.compensated_cumsum(np.zeros((2, 3)), np.zeros((2, 2)))
