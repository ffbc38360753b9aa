"""Closed-form covariance structure of F(t) = u(t, x).

F is the solution of the stochastic heat equation u_t = u_xx / 2 + W'
with zero initial data, observed at a fixed spatial point. It is a
centred Gaussian process with

    E F(s) F(t) = (|t + s|^{1/2} - |t - s|^{1/2}) / sqrt(2 pi),

so everything in this module is an explicit function of square roots.
Several expressions are rearranged to avoid subtractive cancellation;
the rearrangements are algebraically identical to the textbook forms.

Functions accept scalars or numpy arrays unless noted otherwise and
return a Python float for scalar input.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResourceError, UsageError

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_PI = math.sqrt(math.pi)
EPS = np.finfo(float).eps

__all__ = [
    "Partition",
    "GammaSeq",
    "KappaVariant",
    "KappaConstant",
    "cov_F",
    "increment_variance",
    "cross_increment_cov",
    "gamma",
    "uniform_increment_cov",
    "k_function",
    "kappa_sq",
    "signed_squares_series_bound",
]


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


# --------------------------------------------------------------------------
# partitions


@dataclass(frozen=True, eq=False)
class Partition:
    """A partition 0 = t_0 < t_1 < ... < t_N of a time interval.

    Parameters
    ----------
    times : array_like
        Strictly increasing, nonnegative, starting at 0.
    rate : int, optional
        Set by :meth:`uniform`; ``times[j] == j / rate`` for every j.
    """

    times: np.ndarray
    rate: int | None = None

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise UsageError("a partition needs at least two points")
        if t[0] != 0.0:
            raise UsageError("partition must start at t_0 = 0")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise UsageError("partition times must be finite and strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, n, horizon=1.0):
        """Grid j / n for j = 0, ..., floor(n * horizon)."""
        n = int(n)
        if n < 1:
            raise UsageError("grid rate n must be a positive integer")
        if not horizon > 0:
            raise UsageError("horizon must be positive")
        count = grid_index(horizon, n)
        if count < 1:
            raise UsageError("floor(n * horizon) must be at least 1")
        return cls(np.arange(count + 1) / n, rate=n)

    @property
    def is_uniform(self):
        return self.rate is not None

    @property
    def dt(self):
        if self.rate is None:
            raise UsageError("dt is defined only for uniform partitions")
        return 1.0 / self.rate

    @property
    def mesh(self):
        """Largest gap |Pi| = max (t_j - t_{j-1})."""
        return float(np.max(np.diff(self.times)))

    @property
    def size(self):
        """Number of intervals N (so there are N + 1 points)."""
        return self.times.size - 1

    def count(self, t):
        """N(t) = max{j : t_j <= t}; -1 for t < 0."""
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def __len__(self):
        return self.times.size


def grid_index(t, n):
    """floor(n t) for the grid j / n, consistent with float comparisons t_j <= t."""
    j = math.floor(t * n)
    while (j + 1) / n <= t:
        j += 1
    while j > 0 and j / n > t:
        j -= 1
    return j


# --------------------------------------------------------------------------
# covariance of F and of its increments


def cov_F(s, t):
    """E F(s) F(t).

    Uses (sqrt(a + b) - sqrt(b - a)) = 2a / (sqrt(a + b) + sqrt(b - a)) with
    a = min(s, t), b = max(s, t), which is cancellation-free.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("cov_F is defined for s, t >= 0")
    a = np.minimum(s, t)
    b = np.maximum(s, t)
    den = np.sqrt(a + b) + np.sqrt(b - a)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(den > 0, 2.0 * a / np.where(den > 0, den, 1.0), 0.0)
    return _out(val / SQRT_2PI)


def increment_variance(s, t):
    """E |F(t) - F(s)|^2 for 0 <= s <= t.

    Closed form (sqrt t + sqrt s - sqrt(2t + 2s) + sqrt(2t - 2s)) / sqrt(pi),
    evaluated as sqrt(2d) - d^2 / ((sqrt t + sqrt s)^2 (sqrt t + sqrt s +
    sqrt(2t + 2s))) with d = t - s.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0):
        raise DomainError("increment_variance needs s >= 0")
    if np.any(s > t):
        raise DomainError("increment_variance needs s <= t")
    d = t - s
    rs = np.sqrt(s) + np.sqrt(t)
    den = rs * rs * (rs + np.sqrt(2.0 * (t + s)))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 0, d * d / np.where(den > 0, den, 1.0), 0.0)
    return _out((np.sqrt(2.0 * d) - corr) / SQRT_PI)


def _disjoint_cov(s, t, u, v):
    # E[(F(v) - F(u))(F(t) - F(s))] for s < t <= u < v, written so that every
    # subtraction is between exactly known inputs.
    ts = t - s
    vu = v - u
    d_t = math.sqrt(t + v) + math.sqrt(t + u)
    d_s = math.sqrt(s + v) + math.sqrt(s + u)
    plus = -vu * ts * (
        1.0 / (math.sqrt(s + v) + math.sqrt(t + v))
        + 1.0 / (math.sqrt(s + u) + math.sqrt(t + u))
    ) / (d_t * d_s)
    e_t = math.sqrt(v - t) + math.sqrt(u - t)
    e_s = math.sqrt(v - s) + math.sqrt(u - s)
    minus = vu * ts * (
        1.0 / (math.sqrt(v - s) + math.sqrt(v - t))
        + 1.0 / (math.sqrt(u - s) + math.sqrt(u - t))
    ) / (e_t * e_s)
    return (plus - minus) / SQRT_2PI


def cross_increment_cov(s, t, u, v):
    """E[(F(v) - F(u)) (F(t) - F(s))] for 0 <= s <= t and 0 <= u <= v.

    Degenerate intervals give 0. Overlapping intervals are split on the
    common refinement of their endpoints; each elementary pair is then
    either one interval (its variance) or two disjoint ones.
    """
    s, t, u, v = (float(x) for x in (s, t, u, v))
    if min(s, u) < 0:
        raise DomainError("times must be nonnegative")
    if s > t or u > v:
        raise DomainError("intervals must satisfy s <= t and u <= v")
    if s == t or u == v:
        return 0.0
    cuts = sorted({s, t, u, v})
    first = [(a, b) for a, b in zip(cuts, cuts[1:]) if s <= a and b <= t]
    second = [(a, b) for a, b in zip(cuts, cuts[1:]) if u <= a and b <= v]
    terms = []
    for a in first:
        for b in second:
            if a == b:
                terms.append(float(increment_variance(a[0], a[1])))
            elif a[1] <= b[0]:
                terms.append(_disjoint_cov(a[0], a[1], b[0], b[1]))
            else:
                terms.append(_disjoint_cov(b[0], b[1], a[0], a[1]))
    return math.fsum(terms)


# --------------------------------------------------------------------------
# the gamma sequence


def gamma(k):
    """gamma_k = 2 sqrt(k) - sqrt(k - 1) - sqrt(k + 1), k >= 1.

    Evaluated as the cancellation-free product
    2 / ((sqrt(k+1) + sqrt(k-1)) (sqrt(k) + sqrt(k-1)) (sqrt(k+1) + sqrt(k))).
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise DomainError("gamma_k is defined for integers k >= 1")
    a = np.sqrt(k - 1.0)
    b = np.sqrt(k)
    c = np.sqrt(k + 1.0)
    return _out(2.0 / ((c + a) * (b + a) * (c + b)))


class GammaSeq:
    """Read-only table of gamma_1, ..., gamma_m with certified tails.

    The table is immutable after construction and can be shared between
    threads.
    """

    def __init__(self, m):
        m = int(m)
        if m < 1:
            raise UsageError("GammaSeq needs m >= 1")
        values = gamma(np.arange(1, m + 1))
        values = np.atleast_1d(values)
        values.flags.writeable = False
        self._values = values

    @property
    def m(self):
        return self._values.size

    @property
    def values(self):
        return self._values

    def __getitem__(self, k):
        if not 1 <= k <= self.m:
            raise IndexError(k)
        return float(self._values[k - 1])

    def partial_sum(self, m=None):
        m = self.m if m is None else m
        return math.fsum(self._values[:m])

    @staticmethod
    def tail_bound(m):
        """Bounds on (sum_{k>m} gamma_k, sum_{k>m} gamma_k^2).

        The first is the exact telescoped value sqrt(m+1) - sqrt(m); the
        second uses gamma_k <= 2^{-1/2} k^{-3/2} and sum_{k>m} k^{-3} <=
        1 / (2 m^2).
        """
        m = int(m)
        if m < 1:
            raise UsageError("tail bounds need m >= 1")
        linear = 1.0 / (math.sqrt(m + 1.0) + math.sqrt(m))
        square = 1.0 / (4.0 * m * m)
        return linear, square

    @staticmethod
    def cube_tail_bound(m):
        """Bound on sum_{k>m} gamma_k^3 from sum_{k>m} k^{-9/2} <= (2/7) m^{-7/2}."""
        return 2.0 ** -1.5 * (2.0 / 7.0) * float(m) ** -3.5


def uniform_increment_cov(i, j, dt):
    """E[dF_i dF_j] on the grid t_k = k dt (i, j >= 1)."""
    i = int(i)
    j = int(j)
    if i < 1 or j < 1:
        raise DomainError("increment indices start at 1")
    if not dt > 0:
        raise DomainError("dt must be positive")
    if i == j:
        return float(increment_variance((i - 1) * dt, i * dt))
    return -math.sqrt(dt / (2.0 * math.pi)) * (gamma(i + j - 1) + gamma(abs(i - j)))


# --------------------------------------------------------------------------
# signed squares


def k_function(x):
    """K(x) = E[X^{2+-} Y^{2+-}] for a standard normal pair with correlation x.

    K(x) = (6/pi) x sqrt(1 - x^2) + (2/pi) (1 + 2x^2) arcsin(x), with
    K(+-1) = +-3 returned exactly.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1) or np.any(np.isnan(x)):
        raise DomainError("K is defined on [-1, 1]")
    val = 6.0 / math.pi * x * np.sqrt(1.0 - x * x) + 2.0 / math.pi * (1.0 + 2.0 * x * x) * np.arcsin(x)
    val = np.where(np.abs(x) == 1.0, 3.0 * np.sign(x), val)
    return _out(val)


def signed_squares_series_bound():
    """Upper bound 4/pi + 9 sqrt(2)/112 on sum_{i>=1} K(gamma_i / 2)."""
    return 4.0 / math.pi + 9.0 * math.sqrt(2.0) / 112.0


# --------------------------------------------------------------------------
# limiting variance constants


class KappaVariant(str, enum.Enum):
    """Modifications of the squared increments with a Brownian limit."""

    RADEMACHER = "rademacher"
    SIGNED = "signed"
    CENTERED = "centered"
    ALTERNATING = "alternating"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "rademacher": cls.RADEMACHER,
            "rademacher_squares": cls.RADEMACHER,
            "rademachersquares": cls.RADEMACHER,
            "signed": cls.SIGNED,
            "sgn2": cls.SIGNED,
            "signed_squares": cls.SIGNED,
            "signedsquares": cls.SIGNED,
            "centered": cls.CENTERED,
            "centered_squares": cls.CENTERED,
            "centeredsquares": cls.CENTERED,
            "alternating": cls.ALTERNATING,
            "alternating_centered": cls.ALTERNATING,
            "alternatingcentered": cls.ALTERNATING,
        }
        try:
            return aliases[key]
        except KeyError:
            raise UsageError(f"unknown variant {name!r}") from None


@dataclass(frozen=True)
class KappaConstant:
    variant: KappaVariant
    kappa_sq: float
    truncation_error: float
    terms: int = 0
    details: dict = field(default_factory=dict, compare=False)

    @property
    def kappa(self):
        return math.sqrt(self.kappa_sq)


MAX_SERIES_TERMS = 10**8


def _terms_needed(bound_at, tol, max_terms):
    # smallest m (doubling then bisection) with bound_at(m) <= tol
    if bound_at(1) <= tol:
        return 1
    hi = 1
    while bound_at(hi) > tol:
        if hi >= max_terms:
            return None
        hi = min(2 * hi, max_terms)
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound_at(mid) <= tol:
            hi = mid
        else:
            lo = mid
    return hi


def kappa_sq(variant, tol=1e-10, max_terms=MAX_SERIES_TERMS):
    """Limiting variance rate kappa^2 of B_n for one of the four variants.

    Series are summed from i = 1 and truncated where the certified tail
    bound (plus a floating point allowance) drops below ``tol``.

    - rademacher: 6 / pi exactly.
    - centered:   4/pi + (2/pi) sum gamma_i^2.
    - alternating: 4/pi + (2/pi) sum (-1)^i gamma_i^2.
    - signed:     6/pi - (4/pi) sum K(gamma_i / 2). The linear part of K
      (8x/pi) is summed in closed form over the tail, so only the cubic
      remainder 0 <= K(x) - 8x/pi <= 2x^3 is truncated.

    Raises
    ------
    ResourceError
        If ``tol`` cannot be certified within ``max_terms`` terms or lies
        below the rounding floor; ``achievable`` holds the best bound.
    """
    variant = KappaVariant.parse(variant)
    if not tol > 0:
        raise UsageError("tol must be positive")
    if variant is KappaVariant.RADEMACHER:
        return KappaConstant(variant, 6.0 / math.pi, 0.0, 0)

    if variant is KappaVariant.SIGNED:
        def tail(m):
            return GammaSeq.cube_tail_bound(m) / math.pi
    else:
        def tail(m):
            return 2.0 / math.pi * GammaSeq.tail_bound(m)[1]

    # rounding allowance: a few dozen ulps of the O(1) quantities involved
    rounding = 64.0 * EPS * 6.0 / math.pi
    budget = tol - rounding
    m = _terms_needed(tail, budget, max_terms) if budget > 0 else None
    if m is None:
        achievable = tail(max_terms) + rounding
        raise ResourceError(
            f"cannot certify kappa^2 to {tol:g} within {max_terms} terms; "
            f"best achievable bound is {achievable:.3e}",
            achievable=achievable,
        )

    g = GammaSeq(m).values
    if variant is KappaVariant.CENTERED:
        series = math.fsum(g * g)
        value = 4.0 / math.pi + 2.0 / math.pi * series
    elif variant is KappaVariant.ALTERNATING:
        signs = np.where(np.arange(1, m + 1) % 2 == 0, 1.0, -1.0)
        series = math.fsum(signs * g * g)
        value = 4.0 / math.pi + 2.0 / math.pi * series
    else:
        head = math.fsum(np.atleast_1d(k_function(g / 2.0)))
        linear_tail = 4.0 / math.pi * GammaSeq.tail_bound(m)[0]
        series = head + linear_tail
        value = 6.0 / math.pi - 4.0 / math.pi * series
    error = float(tail(m) + rounding)
    return KappaConstant(variant, float(value), error, m, {"series": float(series)})
