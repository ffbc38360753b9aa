"""Variation functionals of a sampled path, as right-continuous step functions.

Every functional is a running sum over grid increments. Sums are taken in
index order with compensated summation (see ``heatvar._backend``), which
keeps the exact path-wise identities checkable at the 1e-10 level.

Each functional comes in two flavours: a ``*_values`` function working on
a 2-D array of increments (one row per replication, used by the Monte
Carlo studies) and a path-level function returning a :class:`StepSeries`.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import UsageError
from .kernel import KappaVariant, grid_index
from .sampler import SeedSpec

FUNCTIONALS = ("quartic", "cubic", "sgn2", "centered", "alternating", "midpoint", "rademacher")


@dataclass(frozen=True, eq=False)
class StepSeries:
    """Right-continuous step function: value(t) = values[k] for the largest knot <= t.

    Before the first knot the step part is 0. ``drift`` adds a continuous
    linear term drift * t (only the centred-sum-with-constant functional
    uses it).
    """

    knots: np.ndarray
    values: np.ndarray
    drift: float = 0.0
    name: str = ""

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise UsageError("knots and values must be 1-D arrays of equal length")
        if np.any(np.diff(knots) <= 0):
            raise UsageError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        step = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 0.0, 0.0)
        out = step + self.drift * t
        return float(out) if out.ndim == 0 else out

    def __neg__(self):
        return StepSeries(self.knots, -self.values, -self.drift, self.name)

    def to_csv(self, fh=None):
        """Write ``t,value`` rows at the knots; returns the text if ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.knots, self.values + self.drift * self.knots):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])
        return buf.getvalue() if fh is None else None

    def to_json(self):
        return {
            "name": self.name,
            "knots": [float(x) for x in self.knots],
            "values": [float(x) for x in self.values],
            "drift": float(self.drift),
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(np.array(doc["knots"]), np.array(doc["values"]), doc.get("drift", 0.0),
                   doc.get("name", ""))


# --------------------------------------------------------------------------
# test-function families


_MEMBER_TAGS = {
    KappaVariant.RADEMACHER: "x2",
    KappaVariant.SIGNED: "sq_signed",
    KappaVariant.CENTERED: "x2m1",
    KappaVariant.ALTERNATING: "x2m1",
}


@dataclass(frozen=True, eq=False)
class HFamily:
    """A family {h_j} of modifications applied to standardised increments.

    ``variant`` is a :class:`KappaVariant` or ``"custom"``. Rademacher
    families carry realised signs ``xi`` (one per increment). Custom
    families name a scalar tag from :mod:`heatvar.oracle` and exist so that
    arbitrary functions can be run through the assumption checks.
    ``lipschitz`` is the stored bound on the Lipschitz constant of h_j'.
    """

    variant: object
    signs: np.ndarray | None = None
    seed: int | None = None
    tag: str | None = None
    lipschitz: float = 2.0

    @classmethod
    def of(cls, variant):
        variant = KappaVariant.parse(variant)
        if variant is KappaVariant.RADEMACHER:
            raise UsageError("Rademacher families need signs; use HFamily.rademacher")
        return cls(variant)

    @classmethod
    def rademacher(cls, seed, count, replication=0):
        seeds = seed if isinstance(seed, SeedSpec) else SeedSpec(seed)
        xi = 2.0 * seeds.sign_stream(replication).integers(0, 2, size=int(count)) - 1.0
        xi.flags.writeable = False
        return cls(KappaVariant.RADEMACHER, xi, seeds.master_seed)

    @classmethod
    def custom(cls, tag, lipschitz=math.inf):
        return cls("custom", tag=tag, lipschitz=lipschitz)

    @property
    def is_custom(self):
        return self.variant == "custom"

    def members(self, j):
        """Law of h_j as [(probability, tag, scale)]: h_j = scale * tag w.p. probability."""
        if self.is_custom:
            return [(1.0, self.tag, 1.0)]
        if self.variant is KappaVariant.RADEMACHER:
            return [(0.5, "x2", 1.0), (0.5, "x2", -1.0)]
        if self.variant is KappaVariant.ALTERNATING:
            return [(1.0, "x2m1", -1.0 if j % 2 else 1.0)]
        return [(1.0, _MEMBER_TAGS[self.variant], 1.0)]

    def __call__(self, x, j):
        """h_j(x) for the realised family (j is 1-based, may be an array)."""
        x = np.asarray(x, dtype=float)
        j = np.asarray(j)
        v = self.variant
        if v is KappaVariant.RADEMACHER:
            if self.signs is None:
                raise UsageError("Rademacher family without realised signs")
            return self.signs[j - 1] * x * x
        if v is KappaVariant.SIGNED:
            return x * np.abs(x)
        if v is KappaVariant.CENTERED:
            return x * x - 1.0
        if v is KappaVariant.ALTERNATING:
            return np.where(j % 2 == 0, 1.0, -1.0) * (x * x - 1.0)
        raise UsageError(f"family {v!r} cannot be evaluated directly")


# --------------------------------------------------------------------------
# array-level functionals: rows are replications, column j-1 is time t_j


def _as2d(a):
    a = np.asarray(a, dtype=float)
    return a[None, :] if a.ndim == 1 else a


def _parity(count):
    # (-1)^j for j = 1..count
    return np.where(np.arange(1, count + 1) % 2 == 0, 1.0, -1.0)


def running_sum(terms):
    return _backend.compensated_cumsum(_as2d(terms))


def quartic_values(increments):
    d = _as2d(increments)
    d2 = d * d
    return running_sum(d2 * d2)


def cubic_values(increments):
    d = _as2d(increments)
    return running_sum(d * d * d)


def square_values(increments):
    d = _as2d(increments)
    return running_sum(d * d)


def alternating_raw_values(increments):
    d = _as2d(increments)
    return running_sum(_parity(d.shape[1]) * d * d)


def b_n_values(increments, variances, variant, signs=None):
    """Running sums of sigma_j^2 h_j(dF_j / sigma_j) for the four built-in variants.

    The terms are written out in closed form (xi dF^2, dF |dF|, dF^2 -
    sigma^2, and its alternating version), which is the same expression
    without the round trip through dF / sigma.
    """
    variant = KappaVariant.parse(variant)
    d = _as2d(increments)
    var = np.asarray(variances, dtype=float)[: d.shape[1]]
    if variant is KappaVariant.RADEMACHER:
        if signs is None:
            raise UsageError("Rademacher B_n needs signs")
        xi = _as2d(signs)[:, : d.shape[1]]
        terms = xi * d * d
    elif variant is KappaVariant.SIGNED:
        terms = d * np.abs(d)
    elif variant is KappaVariant.CENTERED:
        terms = d * d - var
    else:
        terms = _parity(d.shape[1]) * (d * d - var)
    return running_sum(terms)


def midpoint_values(cumulative):
    """I_n at t_2, t_4, ...: running sums of F(t_{2j-1}) (F(t_{2j}) - F(t_{2j-2}))."""
    f = _as2d(cumulative)
    half = (f.shape[1] - 1) // 2
    mid = f[:, 1:2 * half:2]
    terms = mid * (f[:, 2:2 * half + 1:2] - f[:, 0:2 * half - 1:2])
    return running_sum(terms)


def pair_difference_values(increments):
    """Running sums of dF_{2j}^2 - dF_{2j-1}^2 at t_2, t_4, ..."""
    d = _as2d(increments)
    half = d.shape[1] // 2
    even = d[:, 1:2 * half:2]
    odd = d[:, 0:2 * half:2]
    return running_sum(even * even - odd * odd)


# --------------------------------------------------------------------------
# path-level functionals


def _grid_series(path, values, name, drift=0.0):
    return StepSeries(path.times[1:], values[0], drift, name)


def _grid_indices(path, partition):
    n = path.n
    idx = np.rint(np.asarray(partition.times) * n).astype(np.int64)
    bad = np.abs(idx / n - partition.times) > 1e-12 * np.maximum(1.0, partition.times)
    if np.any(bad) or idx[-1] > path.size:
        k = int(np.argmax(bad)) if np.any(bad) else idx.size - 1
        raise UsageError(f"partition point {partition.times[k]!r} is not on the path grid")
    return idx


def quartic_variation(path, partition=None):
    """V(t) = sum_{j <= N(t)} |F(t_j) - F(t_{j-1})|^4 over ``partition``.

    ``partition`` defaults to the path grid and must otherwise consist of
    grid points (for example every k-th point).
    """
    if partition is None:
        return _grid_series(path, quartic_values(path.increments), "quartic")
    idx = _grid_indices(path, partition)
    jumps = np.diff(path.cumulative[idx])
    return StepSeries(partition.times[1:], quartic_values(jumps)[0], 0.0, "quartic")


def signed_cubic(path):
    """Z_n(t) = sum_{j <= floor(nt)} dF_j^3."""
    return _grid_series(path, cubic_values(path.increments), "cubic")


def b_n(path, family):
    """B_n(t) = sum_{j <= floor(nt)} sigma_j^2 h_j(dF_j / sigma_j)."""
    if not isinstance(family, HFamily):
        raise UsageError("b_n needs an HFamily")
    if family.is_custom:
        raise UsageError(f"custom family {family.tag!r} has no B_n evaluator")
    vals = b_n_values(path.increments, path.variances, family.variant, family.signs)
    return _grid_series(path, vals, f"b_n:{family.variant.value}")


def alternating_raw(path):
    """sum_{j <= floor(nt)} (-1)^j dF_j^2 (uncentred)."""
    return _grid_series(path, alternating_raw_values(path.increments), "alternating_raw")


def alternating_drift(variances):
    """A_n at the grid times: running sums of (-1)^j sigma_j^2."""
    var = np.asarray(variances, dtype=float)
    return running_sum(_parity(var.size) * var)[0]


def _check_time(path, t):
    horizon = float(path.times[-1])
    if not 0.0 <= t <= horizon:
        raise UsageError(f"time {t!r} outside [0, {horizon!r}]")
    return grid_index(t, path.n)


def centered_sum_constant(path, t):
    """(sum_{j <= floor(nt)} dF_j^2) - sqrt(2n / pi) t, drift at the exact t."""
    k = _check_time(path, t)
    total = square_values(path.increments)[0, k - 1] if k > 0 else 0.0
    return float(total - math.sqrt(2.0 * path.n / math.pi) * t)


def centered_constant_series(path):
    """Step part sum dF_j^2 with drift -sqrt(2n / pi)."""
    return _grid_series(path, square_values(path.increments), "centered_constant",
                        drift=-math.sqrt(2.0 * path.n / math.pi))


def midpoint_riemann(path):
    """I_n(t) = sum_{j <= floor(nt/2)} F(t_{2j-1}) (F(t_{2j}) - F(t_{2j-2}))."""
    if path.size < 2:
        raise UsageError("midpoint sums need at least two increments")
    vals = midpoint_values(path.cumulative)[0]
    return StepSeries(path.times[2::2][: vals.size], vals, 0.0, "midpoint")


def midpoint_identity_residuals(path):
    """F(t_k)^2 - 2 I_n(t_k) - sum_{j <= floor(k/2)} (dF_{2j}^2 - dF_{2j-1}^2), k = 0..N.

    Equal to F(t_k)^2 - F(t_{2 floor(k/2)})^2; zero at even k.
    """
    f = path.cumulative
    count = path.size
    half = np.arange(count + 1) // 2
    mid = np.concatenate(([0.0], midpoint_values(f)[0]))
    pairs = np.concatenate(([0.0], pair_difference_values(path.increments)[0]))
    return f * f - 2.0 * mid[half] - pairs[half]


def cor48_residual(path, t):
    """Residual of F(t)^2 = 2 I_n(t) + sum (dF_{2j}^2 - dF_{2j-1}^2) at time t.

    F is known on the grid only, so t is snapped to floor(nt) / n first.
    """
    k = _check_time(path, t)
    return float(midpoint_identity_residuals(path)[k])
