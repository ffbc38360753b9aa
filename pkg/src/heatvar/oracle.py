"""Quadrature oracles for Gaussian expectations.

These are deliberately naive and independent of the closed forms in
:mod:`heatvar.kernel`: expectations are computed by brute-force numerical
integration, never by moment formulas, so that agreement between the two
is evidence for both.

Bivariate expectations use Y = rho X + sqrt(1 - rho^2) V with X, V
independent. The outer integral over X and the inner one over V are
piecewise Gauss-Legendre on [-12, 12], split wherever the integrand has a
kink, which keeps non-smooth functions such as x|x| at full accuracy.
Four-dimensional expectations use a tensor Gauss-Hermite rule after a
Cholesky factorisation of the correlation matrix.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionCheckError, DomainError, UsageError
from .kernel import uniform_increment_cov

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ScalarTag:
    func: object
    deriv: object = None
    kinks: tuple = ()


TAGS = {
    "one": ScalarTag(lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "x": ScalarTag(lambda x: x, lambda x: np.ones_like(x)),
    "x2": ScalarTag(lambda x: x * x, lambda x: 2.0 * x),
    "x3": ScalarTag(lambda x: x ** 3, lambda x: 3.0 * x * x),
    "x4": ScalarTag(lambda x: x ** 4, lambda x: 4.0 * x ** 3),
    "x2m1": ScalarTag(lambda x: x * x - 1.0, lambda x: 2.0 * x),
    "sq_signed": ScalarTag(lambda x: x * np.abs(x), lambda x: 2.0 * np.abs(x), (0.0,)),
    "abs": ScalarTag(np.abs, np.sign, (0.0,)),
}


def register_tag(name, func, deriv=None, kinks=()):
    """Make a scalar function available to the oracles under ``name``."""
    TAGS[name] = ScalarTag(func, deriv, tuple(float(k) for k in kinks))


def _tag(name):
    try:
        return TAGS[name]
    except KeyError:
        raise UsageError(f"unknown function tag {name!r}") from None


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature settings.

    order : Gauss-Legendre nodes per segment for 1-D and nested 2-D rules.
    order4 : Gauss-Hermite nodes per axis for 4-D rules.
    truncation : half-width of the integration domain, in standard deviations.
    """

    order: int = 200
    order4: int = 24
    truncation: float = 12.0

    def __post_init__(self):
        if self.order < 8 or self.order4 < 8:
            raise UsageError("quadrature order must be at least 8")
        if not self.truncation > 0:
            raise UsageError("truncation must be positive")

    def gauss_mass(self):
        """Sum of the 1-D Gaussian weights over [-L, L] (should be ~1)."""
        x, w = _segments(np.array([[-self.truncation, self.truncation]]), self.order)
        return float(np.sum(w * _phi(x)))


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


_LEG_CACHE = {}


def _legendre(order):
    if order not in _LEG_CACHE:
        _LEG_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEG_CACHE[order]


def _segments(bounds, order):
    """Nodes and weights for Gauss-Legendre on each row of intervals.

    bounds: (..., k+1) sorted breakpoints; returns arrays of shape (..., k*order).
    """
    u, w = _legendre(order)
    a = bounds[..., :-1, None]
    b = bounds[..., 1:, None]
    half = 0.5 * (b - a)
    x = a + half * (u + 1.0)
    wt = half * w
    shape = bounds.shape[:-1] + (-1,)
    return x.reshape(shape), wt.reshape(shape)


def _breaks(kinks, lim, shift=None, scale=None):
    # breakpoints [-lim, kinks..., lim] with kinks mapped through (k - shift) / scale
    if shift is None:
        pts = [k for k in kinks if -lim < k < lim]
        return np.array([[-lim, *sorted(pts), lim]])
    cols = [np.full(shift.shape, -lim)]
    for k in kinks:
        cols.append(np.clip((k - shift) / scale, -lim, lim))
    cols.append(np.full(shift.shape, lim))
    return np.sort(np.stack(cols, axis=-1), axis=-1)


def expectation(tag, spec=QuadSpec()):
    """E h(X) for standard normal X."""
    t = _tag(tag)
    x, w = _segments(_breaks(t.kinks, spec.truncation), spec.order)
    return float(np.sum(w * _phi(x) * t.func(x)))


def bivariate_expectation(h1, h2, rho, spec=QuadSpec()):
    """E[h1(X) h2(Y)] for standard normals with correlation rho, |rho| < 1.

    Nested Gauss-Legendre quadrature over X and V where Y = rho X +
    sqrt(1 - rho^2) V; the inner rule is split at the kinks of h2 and the
    outer one at the kinks of h1.
    """
    rho = float(rho)
    if not abs(rho) < 1.0:
        raise DomainError(
            "bivariate_expectation needs |rho| < 1; use endpoint_expectation "
            "for the degenerate pairs Y = +-X"
        )
    f1 = _tag(h1)
    f2 = _tag(h2)
    lim = spec.truncation
    eta = math.sqrt((1.0 - rho) * (1.0 + rho))
    x, wx = _segments(_breaks(f1.kinks, lim), spec.order)
    x = x[0]
    wx = wx[0]
    # inner integral over v for every outer node
    v, wv = _segments(_breaks(f2.kinks, lim, shift=rho * x, scale=eta), spec.order)
    y = rho * x[:, None] + eta * v
    inner = np.sum(wv * _phi(v) * f2.func(y), axis=1)
    return float(np.sum(wx * _phi(x) * f1.func(x) * inner))


def endpoint_expectation(h1, h2, sign):
    """E[h1(X) h2(sign * X)]: the rho = +-1 limit as a 1-D integral."""
    if sign not in (1, -1):
        raise UsageError("sign must be +1 or -1")
    f1 = _tag(h1)
    f2 = _tag(h2)
    spec = QuadSpec()
    kinks = set(f1.kinks) | {sign * k for k in f2.kinks}
    x, w = _segments(_breaks(tuple(kinks), spec.truncation), spec.order)
    return float(np.sum(w * _phi(x) * f1.func(x) * f2.func(sign * x)))


def moment44(rho):
    """E[X^4 Y^4] = 24 rho^4 + 72 rho^2 + 9 for unit-variance jointly normal X, Y."""
    rho = float(rho)
    if abs(rho) > 1.0:
        raise DomainError("correlation must lie in [-1, 1]")
    r2 = rho * rho
    return 24.0 * r2 * r2 + 72.0 * r2 + 9.0


def moment33(rho):
    """E[X^3 Y^3] = rho (6 rho^2 + 9) for unit-variance jointly normal X, Y."""
    rho = float(rho)
    if abs(rho) > 1.0:
        raise DomainError("correlation must lie in [-1, 1]")
    return rho * (6.0 * rho * rho + 9.0)


def quadruple_expectation(tags, corr, spec=QuadSpec()):
    """E[prod_i h_i(X_i)] for a standard normal 4-vector with correlation ``corr``.

    Singular (semidefinite) correlation matrices are accepted; indefinite
    ones raise :class:`DomainError`.
    """
    if len(tags) != 4:
        raise UsageError("need exactly four tags")
    funcs = [_tag(t).func for t in tags]
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (4, 4) or not np.allclose(corr, corr.T, atol=1e-14, rtol=0):
        raise DomainError("corr must be a symmetric 4x4 matrix")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-14, rtol=0):
        raise DomainError("corr must have unit diagonal")
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        # singular but semidefinite (e.g. perfectly correlated pairs) is fine
        lam, vec = np.linalg.eigh(corr)
        if lam[0] < -1e-12:
            raise DomainError(f"corr is not positive semidefinite (eigenvalue {lam[0]:.3g})") from None
        chol = vec * np.sqrt(np.clip(lam, 0.0, None))
    z, w = np.polynomial.hermite_e.hermegauss(spec.order4)
    w = w / _SQRT_2PI
    grids = np.meshgrid(z, z, z, z, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.einsum("i,j,k,l->ijkl", w, w, w, w).ravel()
    xs = pts @ chol.T
    prod = np.ones(xs.shape[0])
    for i, f in enumerate(funcs):
        prod *= f(xs[:, i])
    return float(np.sum(wts * prod))


def increment_correlations(indices, dt):
    """Correlation matrix of the standardised increments dF_k / sigma_k."""
    idx = [int(k) for k in indices]
    cov = np.array([[uniform_increment_cov(i, j, dt) for j in idx] for i in idx])
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


# --------------------------------------------------------------------------
# assumption checks for test-function families


@dataclass
class FamilyCheckReport:
    """Outcome of the structural checks on a family {h_j}.

    mean_abs : max_j |E h_j(X)| over representative indices.
    fitted_L : smallest L with |E h_i(X) h_j(Y)| <= L |rho| on the grid.
    derivative_lipschitz : numerical Lipschitz constant of h_j' on [-8, 8].
    """

    family: str
    mean_abs: float
    fitted_L: float
    derivative_lipschitz: float
    stored_lipschitz: float
    covariances: list = field(default_factory=list)
    mean_tol: float = 1e-10

    @property
    def mean_zero(self):
        return self.mean_abs < self.mean_tol

    @property
    def passed(self):
        return (
            self.mean_zero
            and math.isfinite(self.fitted_L)
            and self.derivative_lipschitz <= self.stored_lipschitz * (1 + 1e-6)
        )

    def to_json(self):
        return {
            "family": self.family,
            "mean_abs": self.mean_abs,
            "mean_zero": self.mean_zero,
            "fitted_L": self.fitted_L,
            "derivative_lipschitz": self.derivative_lipschitz,
            "stored_lipschitz": self.stored_lipschitz,
            "covariances": self.covariances,
            "passed": self.passed,
        }


def _derivative(tag, x):
    t = _tag(tag)
    if t.deriv is not None:
        return t.deriv(x)
    h = 1e-6
    return (t.func(x + h) - t.func(x - h)) / (2 * h)


def _lipschitz_of_derivative(tag, lim=8.0, points=16001):
    """Max slope of h' on a grid; raises if slopes blow up under refinement."""
    coarse = np.linspace(-lim, lim, points)
    fine = np.linspace(-lim, lim, 16 * (points - 1) + 1)
    slopes = []
    for grid in (coarse, fine):
        d = _derivative(tag, grid)
        if not np.all(np.isfinite(d)):
            k = int(np.argmin(np.isfinite(d)))
            raise AssumptionCheckError(f"h' of {tag!r} is not finite at x = {grid[k]:.6g}",
                                       location=float(grid[k]))
        slopes.append(np.abs(np.diff(d)) / (grid[1] - grid[0]))
    c_max = float(np.max(slopes[0]))
    f_max = float(np.max(slopes[1]))
    if f_max > 2.0 * c_max + 1e-9:
        k = int(np.argmax(slopes[1]))
        where = 0.5 * (fine[k] + fine[k + 1])
        raise AssumptionCheckError(
            f"h' of {tag!r} is not Lipschitz near x = {where:.6g} "
            f"(slope {c_max:.3g} -> {f_max:.3g} under refinement)",
            location=float(where),
        )
    return f_max


def _family_name(family):
    return family.tag if family.is_custom else family.variant.value


def check_assumption31(family, rho_grid, spec=QuadSpec(), indices=(1, 2, 3)):
    """Check mean zero, the linear covariance bound and the derivative bound.

    ``family`` is a :class:`heatvar.variations.HFamily`. Distinct indices
    i != j stand for independent members, so for random families (the
    Rademacher signs) the expectation runs over both realisations.
    """
    rho_grid = [float(r) for r in rho_grid]
    if not rho_grid:
        raise UsageError("rho_grid must be nonempty")
    if any(abs(r) >= 1 for r in rho_grid):
        raise UsageError("rho_grid must exclude +-1")

    def mean_of(j):
        return math.fsum(p * s * expectation(tag, spec) for p, tag, s in family.members(j))

    def cross(i, j, rho):
        return math.fsum(
            pa * pb * sa * sb * bivariate_expectation(ta, tb, rho, spec)
            for pa, ta, sa in family.members(i)
            for pb, tb, sb in family.members(j)
        )

    mean_abs = max(abs(mean_of(j)) for j in indices)
    table = []
    fitted = 0.0
    pairs = [(a, b) for k, a in enumerate(indices) for b in indices[k + 1:]]
    for rho in rho_grid:
        worst = max(abs(cross(i, j, rho)) for i, j in pairs)
        table.append({"rho": rho, "max_abs_cov": worst})
        if rho == 0.0:
            if worst > 1e-10:
                fitted = math.inf
        else:
            fitted = max(fitted, worst / abs(rho))

    deriv_l = 0.0
    seen = set()
    for j in indices:
        for _, tag, scale in family.members(j):
            if (tag, abs(scale)) in seen:
                continue
            seen.add((tag, abs(scale)))
            deriv_l = max(deriv_l, abs(scale) * _lipschitz_of_derivative(tag))

    return FamilyCheckReport(
        family=_family_name(family),
        mean_abs=mean_abs,
        fitted_L=fitted,
        derivative_lipschitz=deriv_l,
        stored_lipschitz=float(family.lipschitz),
        covariances=table,
    )
