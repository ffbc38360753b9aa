"""Exact sampling of F on a uniform grid.

The increments dF_j = F(t_j) - F(t_{j-1}) on t_j = j / n have the closed
form covariance of :func:`heatvar.kernel.uniform_increment_cov`. We build
that matrix once, take its Cholesky factor L once, and then every
replication is ``L @ z`` with ``z`` standard normal. There is no
discretisation error: the sampled vector has exactly the law of
(F(t_1), ..., F(t_N)) up to floating point.

Replication ``r`` draws from its own stream derived from the master seed,
so a batch is identical whatever the thread count or the order in which
blocks are evaluated.
"""

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from . import _backend
from .errors import FactorizationError, ResourceError, UsageError
from .kernel import Partition, gamma, grid_index, increment_variance

logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
JITTER = 1e-12
BLOCK = 32  # replications per work item; fixed so results do not depend on threads

_PATH_STREAMS = 0
_SIGN_STREAMS = 1


@dataclass(frozen=True, eq=False)
class IncrementCovariance:
    """Covariance matrix of (dF_1, ..., dF_N) on the grid j / n, N = floor(n T)."""

    n: int
    horizon: float
    entries: np.ndarray

    @property
    def dt(self):
        return 1.0 / self.n

    @property
    def size(self):
        return self.entries.shape[0]

    @property
    def variances(self):
        return np.diagonal(self.entries).copy()

    @property
    def sigma(self):
        return np.sqrt(np.diagonal(self.entries))

    @property
    def partition(self):
        return Partition.uniform(self.n, self.horizon)


@dataclass(frozen=True, eq=False)
class Factor:
    """Lower-triangular L with L L^T equal to the increment covariance."""

    lower: np.ndarray
    cov: IncrementCovariance
    jitter: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.lower.shape[0]

    @property
    def min_pivot(self):
        return float(np.min(np.diagonal(self.lower)) ** 2)

    def reconstruction_error(self):
        """max |L L^T - C| / sqrt(dt). O(N^3); meant for diagnostics."""
        resid = self.lower @ self.lower.T - self.cov.entries
        return float(np.max(np.abs(resid)) / math.sqrt(self.cov.dt))


class SeedSpec:
    """Master seed plus deterministic per-replication streams.

    Path streams and the Rademacher sign streams live in disjoint
    families of spawn keys, so signs are independent of every path.
    """

    def __init__(self, master_seed):
        if isinstance(master_seed, bool) or not isinstance(master_seed, (int, np.integer)):
            raise UsageError("master seed must be an integer")
        master_seed = int(master_seed)
        if not 0 <= master_seed < 2**64:
            raise UsageError("master seed must fit in 64 unsigned bits")
        self.master_seed = master_seed

    def _generator(self, family, r):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(family, int(r)))
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, r):
        """Generator for the path of replication ``r``."""
        return self._generator(_PATH_STREAMS, r)

    def sign_stream(self, r):
        """Generator for the Rademacher signs of replication ``r``."""
        return self._generator(_SIGN_STREAMS, r)

    def __repr__(self):
        return f"SeedSpec({self.master_seed})"


@dataclass(frozen=True, eq=False)
class PathSample:
    """One realisation of F on a uniform grid.

    ``increments`` are defined as differences of ``cumulative`` so that
    cumulative[j] - cumulative[j-1] == increments[j-1] holds exactly.
    ``variances`` are the exact sigma_j^2 from the covariance diagonal.
    """

    partition: Partition
    increments: np.ndarray
    cumulative: np.ndarray
    variances: np.ndarray

    @property
    def n(self):
        return self.partition.rate

    @property
    def dt(self):
        return self.partition.dt

    @property
    def times(self):
        return self.partition.times

    @property
    def size(self):
        return self.increments.size

    def negated(self):
        return PathSample(self.partition, -self.increments, -self.cumulative, self.variances)

    @classmethod
    def from_values(cls, n, values, variances=None):
        """Wrap given grid values F(t_0) = 0, F(t_1), ... (for tests and imports)."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size < 2 or values[0] != 0.0:
            raise UsageError("path values must start with F(0) = 0")
        part = Partition(np.arange(values.size) / n, rate=int(n))
        if variances is None:
            t = part.times
            variances = increment_variance(t[:-1], t[1:])
        return cls(part, np.diff(values), values, np.asarray(variances, dtype=float))


class PathBatch(Sequence):
    """M replications on a common grid, stored as arrays.

    Indexing yields :class:`PathSample` views; the arrays themselves are
    what the vectorised functionals consume.
    """

    def __init__(self, partition, increments, cumulative, variances, seeds=None):
        self.partition = partition
        self.increments = increments
        self.cumulative = cumulative
        self.variances = variances
        self.seeds = seeds

    def __len__(self):
        return self.increments.shape[0]

    def __getitem__(self, r):
        if isinstance(r, slice):
            return PathBatch(self.partition, self.increments[r], self.cumulative[r],
                             self.variances, self.seeds)
        return PathSample(self.partition, self.increments[r], self.cumulative[r], self.variances)

    @property
    def n(self):
        return self.partition.rate

    @property
    def size(self):
        return self.increments.shape[1]


def _check_budget(count, budget):
    need = 4 * 8 * count * count  # matrix, factor, two construction temporaries
    if need > budget:
        raise ResourceError(
            f"increment covariance of size {count} needs about {need / 2**30:.2f} GiB, "
            f"budget is {budget / 2**30:.2f} GiB"
        )


def build_increment_covariance(n, horizon=1.0, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Exact covariance of the increments on t_j = j / n, j <= floor(n T).

    Off the diagonal the entries are -sqrt(dt / 2pi) (gamma_{i+j-1} +
    gamma_{|i-j|}); on it, the exact increment variance.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise UsageError("grid rate n must be a positive integer")
    n = int(n)
    if not horizon > 0:
        raise UsageError("horizon must be positive")
    count = grid_index(horizon, n)
    if count < 1:
        raise UsageError("floor(n * horizon) must be at least 1")
    _check_budget(count, memory_budget)

    dt = 1.0 / n
    g = np.atleast_1d(gamma(np.arange(1, 2 * count)))
    lag = np.concatenate(([0.0], g[: count - 1]))
    entries = scipy.linalg.toeplitz(lag)
    entries += scipy.linalg.hankel(g[:count], g[count - 1:])
    entries *= -math.sqrt(dt / (2.0 * math.pi))
    t = np.arange(count + 1) * dt
    np.fill_diagonal(entries, increment_variance(t[:-1], t[1:]))
    entries.flags.writeable = False
    return IncrementCovariance(n, float(horizon), entries)


def _pivot_value(a, k):
    # Schur complement at the first failing pivot k (0-based)
    if k == 0:
        return float(a[0, 0])
    lk = scipy.linalg.cholesky(a[:k, :k], lower=True)
    x = scipy.linalg.solve_triangular(lk, a[:k, k], lower=True)
    return float(a[k, k] - x @ x)


def factorize(cov, jitter=JITTER):
    """Cholesky factor of the increment covariance.

    On a non-positive pivot the diagonal is shifted once by jitter *
    sqrt(dt) and the attempt is logged in ``Factor.metadata``. A second
    failure raises :class:`FactorizationError` with the pivot index (1-based)
    and the value of the offending Schur complement.
    """
    a = np.array(cov.entries, dtype=float, order="F")
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    meta = {"jitter_events": 0}
    applied = 0.0
    if info != 0:
        if info < 0:
            raise ValueError(f"dpotrf argument {-info} is invalid")
        first_value = _pivot_value(a, info - 1)
        logger.warning("pivot %d = %.3e not positive; retrying with jitter", info, first_value)
        applied = jitter * math.sqrt(cov.dt)
        shifted = a + applied * np.eye(a.shape[0])
        c, info2 = lapack.dpotrf(shifted, lower=1, clean=1, overwrite_a=0)
        meta.update(jitter_events=1, first_failure={"index": int(info), "value": first_value})
        if info2 != 0:
            value = _pivot_value(shifted, info2 - 1)
            raise FactorizationError(
                f"non-positive pivot {value:.3e} at index {info2} after jitter",
                index=int(info2), value=value,
            )
    lower = np.ascontiguousarray(c)
    lower.flags.writeable = False
    factor = Factor(lower, cov, applied, meta)
    meta["min_pivot"] = factor.min_pivot
    return factor


def _assemble(raw):
    # raw increments -> compensated partial sums -> exact differences
    m, count = raw.shape
    cumulative = np.zeros((m, count + 1))
    cumulative[:, 1:] = _backend.compensated_cumsum(raw)
    return np.diff(cumulative, axis=1), cumulative


def _normals(seeds, rows, count):
    return np.stack([seeds.stream(r).standard_normal(count) for r in rows])


def sample_path(factor, stream):
    """One path from ``stream`` (a numpy Generator at its starting state)."""
    z = stream.standard_normal(factor.size)
    inc, cum = _assemble(_backend.lower_apply(factor.lower, z[None, :]))
    cov = factor.cov
    return PathSample(cov.partition, inc[0], cum[0], cov.variances)


def sample_batch(factor, seeds, M, threads=1):
    """M paths; replication r uses ``seeds.stream(r)``.

    Work is split into fixed blocks of replications, so the output does
    not depend on ``threads``.
    """
    M = int(M)
    if M < 1:
        raise UsageError("need at least one replication")
    if not isinstance(seeds, SeedSpec):
        seeds = SeedSpec(seeds)
    count = factor.size
    increments = np.empty((M, count))
    cumulative = np.empty((M, count + 1))

    def work(start):
        rows = range(start, min(start + BLOCK, M))
        z = _normals(seeds, rows, count)
        inc, cum = _assemble(_backend.lower_apply(factor.lower, z))
        increments[start:start + len(rows)] = inc
        cumulative[start:start + len(rows)] = cum

    starts = range(0, M, BLOCK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    cov = factor.cov
    return PathBatch(cov.partition, increments, cumulative, cov.variances, seeds)


def rademacher_signs(seeds, M, count):
    """M x count array of independent +-1 signs from the sign streams."""
    if not isinstance(seeds, SeedSpec):
        seeds = SeedSpec(seeds)
    out = np.empty((int(M), int(count)))
    for r in range(int(M)):
        out[r] = 2.0 * seeds.sign_stream(r).integers(0, 2, size=count) - 1.0
    return out
