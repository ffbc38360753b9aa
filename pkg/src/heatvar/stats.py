"""Monte Carlo studies with pass/fail rules.

A study is described by an :class:`ExperimentSpec` and produces an
:class:`ExperimentReport` whose rows carry estimate, standard error,
analytic target and z-score. :func:`run_spec` runs a whole JSON document
of studies, sharing one factorisation and one batch of paths per
(n, T, seed) across studies.

Reports are reproducible bit for bit: paths come from per-replication
streams, every replication-level statistic is computed row-wise, and all
reductions over replications go through ``math.fsum``.
"""

import functools
import math
import platform
import time
from dataclasses import dataclass, field

import numpy as np
import scipy
import scipy.stats

from . import _backend
from .errors import UsageError
from .kernel import (
    KappaVariant,
    cov_F,
    cross_increment_cov,
    grid_index,
    increment_variance,
    k_function,
    kappa_sq,
    signed_squares_series_bound,
    uniform_increment_cov,
)
from .sampler import SeedSpec, build_increment_covariance, factorize, rademacher_signs, sample_batch
from .variations import b_n_values, midpoint_identity_residuals, cubic_values, quartic_values

SCHEMA_VERSION = 1
DEFAULT_Z = 3.0
DEFAULT_ALPHA = 0.01
MIN_REPLICATIONS = 30
SIX_OVER_PI = 6.0 / math.pi

ALL_VARIANTS = tuple(v.value for v in KappaVariant)

# mean of h' under the standard normal, per variant (zero unless signed)
_MEAN_DERIVATIVE = {KappaVariant.SIGNED: 2.0 * math.sqrt(2.0 / math.pi)}


# --------------------------------------------------------------------------
# small numeric helpers


def mean_stderr(y):
    """Mean and stderr (sample sd / sqrt(M)) with fsum-based reductions."""
    y = np.asarray(y, dtype=float).ravel()
    m = y.size
    if m == 0:
        raise UsageError("no samples")
    mean = math.fsum(y) / m
    if m < 2:
        return mean, math.nan
    var = math.fsum((y - mean) ** 2) / (m - 1)
    return mean, math.sqrt(var / m)


def correlation(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mx = math.fsum(x) / x.size
    my = math.fsum(y) / y.size
    dx = x - mx
    dy = y - my
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        return 0.0
    return math.fsum(dx * dy) / math.sqrt(sxx * syy)


def _z(estimate, target, stderr):
    if stderr > 0:
        return (estimate - target) / stderr
    return 0.0 if estimate == target else math.copysign(math.inf, estimate - target)


@functools.lru_cache(maxsize=None)
def kappa_target(variant):
    return kappa_sq(variant, tol=1e-10).kappa_sq


# --------------------------------------------------------------------------
# specs and reports


@dataclass(frozen=True)
class Tolerance:
    z: float = DEFAULT_Z
    alpha: float = DEFAULT_ALPHA


STUDY_KINDS = (
    "second_moment",
    "fourth_moment_scaling",
    "normality",
    "independence",
    "cubic_decay",
    "quartic_convergence",
    "kernel_consistency",
    "kappa_constants",
    "sampler_law",
    "midpoint_identity",
    "family_checks",
)

_STOCHASTIC = {
    "second_moment", "fourth_moment_scaling", "normality", "independence",
    "cubic_decay", "quartic_convergence", "sampler_law", "midpoint_identity",
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One study.

    ``pairs`` are (s, t) time pairs; ``options`` holds kind-specific
    settings (probe times, rho grid, slope bands, ...).
    """

    kind: str
    variants: tuple = ("centered",)
    n_list: tuple = (4096,)
    horizon: float = 1.0
    pairs: tuple = ((0.0, 1.0),)
    M: int = 2000
    master_seed: int | None = None
    tolerance: Tolerance = field(default_factory=Tolerance)
    id: str = ""
    criterion: int | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise UsageError(f"unknown study kind {self.kind!r}")
        object.__setattr__(self, "variants", tuple(KappaVariant.parse(v).value for v in self.variants))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "pairs", tuple((float(s), float(t)) for s, t in self.pairs))
        if self.kind in _STOCHASTIC:
            self.validate()

    @property
    def stochastic(self):
        return self.kind in _STOCHASTIC

    def validate(self):
        if any(n < 2 for n in self.n_list) and self.kind != "sampler_law":
            raise UsageError("every n must be at least 2")
        if self.horizon < 0:
            raise UsageError("horizon must be nonnegative")
        for s, t in self.pairs:
            if not 0.0 <= s <= t <= self.horizon:
                raise UsageError(f"time pair ({s}, {t}) must satisfy 0 <= s <= t <= T")
        if self.M < MIN_REPLICATIONS:
            raise UsageError(f"M = {self.M} is below the minimum of {MIN_REPLICATIONS} replications")

    def seeds(self):
        if self.master_seed is None:
            raise UsageError(f"study {self.id or self.kind!r} needs a master seed")
        return SeedSpec(self.master_seed)

    @classmethod
    def from_json(cls, doc, defaults=None, where="study"):
        """Build from a JSON object; errors name the offending field path."""
        if not isinstance(doc, dict):
            raise UsageError(f"{where}: expected an object")
        merged = dict(defaults or {})
        merged.update(doc)
        known = {"kind", "variants", "n_list", "n", "horizon", "pairs", "M", "master_seed",
                 "tolerance", "id", "criterion", "options"}
        extra = sorted(set(merged) - known)
        if extra:
            raise UsageError(f"{where}.{extra[0]}: unknown field")
        if "kind" not in merged:
            raise UsageError(f"{where}.kind: missing")
        kw = {"kind": merged["kind"]}
        try:
            if "n" in merged:
                kw["n_list"] = (merged["n"],)
            if "n_list" in merged:
                kw["n_list"] = tuple(merged["n_list"])
            for key in ("variants", "pairs"):
                if key in merged:
                    kw[key] = tuple(tuple(p) if key == "pairs" else p for p in merged[key])
            for key, conv in (("horizon", float), ("M", int), ("id", str), ("criterion", int)):
                if key in merged and merged[key] is not None:
                    kw[key] = conv(merged[key])
            if merged.get("master_seed") is not None:
                kw["master_seed"] = int(merged["master_seed"])
            tol = merged.get("tolerance", {})
            kw["tolerance"] = Tolerance(float(tol.get("z", DEFAULT_Z)), float(tol.get("alpha", DEFAULT_ALPHA)))
            kw["options"] = dict(merged.get("options", {}))
        except (TypeError, ValueError, AttributeError) as exc:
            raise UsageError(f"{where}: {exc}") from None
        try:
            return cls(**kw)
        except UsageError as exc:
            raise UsageError(f"{where}: {exc}") from None


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True
    jitter_events: int = 0
    wall_clock_seconds: float = 0.0

    def add(self, **row):
        self.rows.append(row)
        return row

    def to_json(self):
        s = self.spec
        return {
            "id": s.id,
            "kind": s.kind,
            "criterion": s.criterion,
            "master_seed": s.master_seed,
            "M": s.M if s.stochastic else None,
            "tolerance": {"z": s.tolerance.z, "alpha": s.tolerance.alpha},
            "rows": [_clean(r) for r in self.rows],
            "summary": _clean(self.summary),
            "passed": bool(self.passed),
            "jitter_events": int(self.jitter_events),
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def _clean(obj):
    # plain JSON types; non-finite floats become strings
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


# --------------------------------------------------------------------------
# shared paths


class PathCache:
    """Factorisations and path batches keyed by (n, T) and (n, T, seed).

    Replication r always comes from stream r, so a batch of M paths is a
    prefix of any larger batch with the same key.
    """

    def __init__(self, threads=1):
        self.threads = int(threads)
        self._factors = {}
        self._batches = {}
        self._signs = {}
        self._bvals = {}
        self._reserve = {}

    def reserve(self, n, horizon, seed, M):
        key = (n, float(horizon), seed)
        self._reserve[key] = max(self._reserve.get(key, 0), M)

    def factor(self, n, horizon):
        key = (n, float(horizon))
        if key not in self._factors:
            self._factors[key] = factorize(build_increment_covariance(n, horizon))
        return self._factors[key]

    def batch(self, n, horizon, seed, M):
        key = (n, float(horizon), seed)
        have = self._batches.get(key)
        if have is None or len(have) < M:
            size = max(M, self._reserve.get(key, 0))
            have = sample_batch(self.factor(n, horizon), SeedSpec(seed), size, self.threads)
            self._batches[key] = have
            self._signs.pop(key, None)
            self._bvals = {k: v for k, v in self._bvals.items() if k[0] != key}
        return have[:M]

    def signs(self, n, horizon, seed, M):
        key = (n, float(horizon), seed)
        full = self.batch(n, horizon, seed, M)
        have = self._signs.get(key)
        if have is None or have.shape[0] < M:
            have = rademacher_signs(SeedSpec(seed), len(self._batches[key]), full.size)
            self._signs[key] = have
        return have[:M]

    def b_values(self, variant, n, horizon, seed, M):
        """Running sums of B_n at the grid times, one row per replication."""
        key = (n, float(horizon), seed)
        variant = KappaVariant.parse(variant)
        batch = self.batch(n, horizon, seed, M)
        memo = self._bvals.get((key, variant))
        if memo is None:
            full = self._batches[key]
            signs = None
            if variant is KappaVariant.RADEMACHER:
                signs = self.signs(n, horizon, seed, len(full))
            memo = b_n_values(full.increments, full.variances, variant, signs)
            self._bvals[(key, variant)] = memo
        return memo[:M], batch

    def jitter_events(self, n, horizon):
        return self.factor(n, horizon).metadata.get("jitter_events", 0)


def _at(values, k):
    # running sums evaluated at grid index k (0 -> empty sum)
    if k == 0:
        return np.zeros(values.shape[0])
    return values[:, k - 1]


def _increment(values, n, s, t):
    return _at(values, grid_index(t, n)) - _at(values, grid_index(s, n))


# --------------------------------------------------------------------------
# exact finite-n diagnostics


def exact_second_moment(cov, variant, s, t):
    """E|B_n(t) - B_n(s)|^2 at finite n from the increment covariance."""
    variant = KappaVariant.parse(variant)
    i0 = grid_index(s, cov.n)
    i1 = grid_index(t, cov.n)
    if i1 <= i0:
        return 0.0
    c = np.asarray(cov.entries)[i0:i1, i0:i1]
    sig = np.sqrt(np.diagonal(c))
    if variant is KappaVariant.RADEMACHER:
        return math.fsum(3.0 * sig ** 4)
    parts = []
    idx = np.arange(i0 + 1, i1 + 1)
    par = np.where(idx % 2 == 0, 1.0, -1.0)
    for a in range(0, c.shape[0], 512):
        block = c[a:a + 512]
        if variant is KappaVariant.CENTERED:
            parts.append(math.fsum((2.0 * block * block).ravel()))
        elif variant is KappaVariant.ALTERNATING:
            parts.append(math.fsum((2.0 * np.outer(par[a:a + 512], par) * block * block).ravel()))
        else:
            outer = np.outer(sig[a:a + 512], sig)
            rho = np.clip(block / outer, -1.0, 1.0)
            parts.append(math.fsum((outer * outer * k_function(rho)).ravel()))
    return math.fsum(parts)


def exact_correlation_with_F(cov, variant, t, r):
    """corr(B_n(t), F(r)) at finite n (zero unless E h' != 0)."""
    variant = KappaVariant.parse(variant)
    c_h = _MEAN_DERIVATIVE.get(variant, 0.0)
    if c_h == 0.0:
        return 0.0
    k = grid_index(t, cov.n)
    q = grid_index(r, cov.n)
    c = np.asarray(cov.entries)
    sig = np.sqrt(np.diagonal(c))[:k]
    cross = c[:k, :q].sum(axis=1)  # Cov(dF_i, F(t_q))
    cov_bf = c_h * math.fsum(sig * cross)
    var_f = cov_F(q / cov.n, q / cov.n)
    var_b = exact_second_moment(cov, variant, 0.0, t)
    return cov_bf / math.sqrt(var_f * var_b)


# --------------------------------------------------------------------------
# individual tests


@dataclass(frozen=True)
class NormalityResult:
    statistic: float
    pvalue: float
    passed: bool


def normality_test(samples, target_variance, alpha=DEFAULT_ALPHA):
    """Two-sided KS test of ``samples`` against N(0, target_variance)."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 200:
        raise UsageError("normality test needs at least 200 samples")
    if not target_variance > 0:
        raise UsageError("target variance must be positive")
    res = scipy.stats.kstest(samples, "norm", args=(0.0, math.sqrt(target_variance)))
    return NormalityResult(float(res.statistic), float(res.pvalue), bool(res.pvalue >= alpha))


@dataclass(frozen=True)
class ProbeRow:
    label: str
    corr: float
    stderr: float
    threshold: float
    passed: bool


def independence_probe(pairs, labels=None, min_pairs=500):
    """Linear-correlation probe between F values and B values.

    ``pairs`` is a sequence of (F-values, B-values) arrays, one per probe
    time. Only linear dependence is detected: a functional such as F^2 can
    be dependent on F and still uncorrelated with it.
    """
    rows = []
    labels = labels or [str(i) for i in range(len(pairs))]
    for label, (f, b) in zip(labels, pairs):
        f = np.asarray(f, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if f.size != b.size:
            raise UsageError(f"probe {label}: {f.size} F values but {b.size} B values")
        if f.size < min_pairs:
            raise UsageError(f"independence probe needs at least {min_pairs} pairs")
        rho = correlation(f, b)
        se = 1.0 / math.sqrt(f.size)
        thr = max(0.1, 4.0 * se)
        rows.append(ProbeRow(label, rho, se, thr, abs(rho) <= thr))
    return rows


def _slope(x, y):
    fit = scipy.stats.linregress(np.log(x), np.log(y))
    df = len(x) - 2
    half = scipy.stats.t.ppf(0.975, df) * fit.stderr if df > 0 else math.inf
    return float(fit.slope), float(fit.stderr), (float(fit.slope - half), float(fit.slope + half))


# --------------------------------------------------------------------------
# studies


def _report(spec):
    return ExperimentReport(spec)


def second_moment_study(spec, cache=None):
    """Mean square of B_n(t) - B_n(s) against kappa^2 (t - s)."""
    cache = cache or PathCache()
    rep = _report(spec)
    seed = spec.seeds().master_seed
    exact = spec.options.get("exact_diagnostics", True)
    for variant in spec.variants:
        k2 = kappa_target(variant)
        for n in spec.n_list:
            vals, _ = cache.b_values(variant, n, spec.horizon, seed, spec.M)
            for s, t in spec.pairs:
                y = _increment(vals, n, s, t) ** 2
                est, se = mean_stderr(y)
                target = k2 * (t - s)
                z = _z(est, target, se)
                row = rep.add(variant=variant, n=n, s=s, t=t, statistic="mean_square",
                              estimate=est, stderr=se, target=target, z=z,
                              passed=abs(z) <= spec.tolerance.z)
                if exact:
                    cov = cache.factor(n, spec.horizon).cov
                    row["finite_n_exact"] = exact_second_moment(cov, variant, s, t)
            rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def fourth_moment_scaling(spec, cache=None):
    """Slope of log E|B_n(t) - B_n(s)|^4 against log(t - s)."""
    cache = cache or PathCache()
    gaps = sorted({t - s for s, t in spec.pairs})
    if len(gaps) < 3 or gaps[0] <= 0:
        raise UsageError("fourth-moment scaling needs at least 3 distinct positive gaps")
    lo, hi = spec.options.get("slope_band", (1.7, 2.3))
    rep = _report(spec)
    seed = spec.seeds().master_seed
    for variant in spec.variants:
        for n in spec.n_list:
            vals, _ = cache.b_values(variant, n, spec.horizon, seed, spec.M)
            xs, ys = [], []
            for s, t in spec.pairs:
                est, se = mean_stderr(_increment(vals, n, s, t) ** 4)
                rep.add(variant=variant, n=n, s=s, t=t, statistic="fourth_moment",
                        estimate=est, stderr=se, target=None, z=None, passed=True)
                xs.append(t - s)
                ys.append(est)
            slope, se, ci = _slope(xs, ys)
            rep.add(variant=variant, n=n, statistic="slope", estimate=slope, stderr=se,
                    ci95=list(ci), target=2.0, band=[lo, hi], z=None, passed=lo <= slope <= hi)
            rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def normality_study(spec, cache=None):
    """KS test of B_n(t) against N(0, kappa^2 (t - s)) for each pair."""
    cache = cache or PathCache()
    rep = _report(spec)
    seed = spec.seeds().master_seed
    for variant in spec.variants:
        k2 = kappa_target(variant)
        for n in spec.n_list:
            vals, _ = cache.b_values(variant, n, spec.horizon, seed, spec.M)
            for s, t in spec.pairs:
                res = normality_test(_increment(vals, n, s, t), k2 * (t - s), spec.tolerance.alpha)
                rep.add(variant=variant, n=n, s=s, t=t, statistic="ks", estimate=res.statistic,
                        pvalue=res.pvalue, target_variance=k2 * (t - s), alpha=spec.tolerance.alpha,
                        passed=res.passed)
            rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def independence_study(spec, cache=None):
    """corr(B_n(t), F(r)) for the probe times r in ``options['probe_times']``."""
    cache = cache or PathCache()
    probes = [float(r) for r in spec.options.get("probe_times", (0.25, 0.5, 1.0))]
    rep = _report(spec)
    seed = spec.seeds().master_seed
    for variant in spec.variants:
        for n in spec.n_list:
            vals, batch = cache.b_values(variant, n, spec.horizon, seed, spec.M)
            cov = cache.factor(n, spec.horizon).cov
            for _, t in spec.pairs:
                b = _at(vals, grid_index(t, n))
                fs = [batch.cumulative[:, grid_index(r, n)] for r in probes]
                rows = independence_probe([(f, b) for f in fs], [str(r) for r in probes])
                for r, row in zip(probes, rows):
                    rep.add(variant=variant, n=n, t=t, r=r, statistic="corr", estimate=row.corr,
                            stderr=row.stderr, target=0.0, threshold=row.threshold,
                            finite_n_exact=exact_correlation_with_F(cov, variant, t, r),
                            passed=row.passed)
            rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def cubic_decay_study(spec, cache=None):
    """Slope of log E|Z_n(T)|^2 against log n, and E Z_n(T) = 0."""
    cache = cache or PathCache()
    ns = sorted(spec.n_list)
    if len(ns) < 3 or ns[-1] < 16 * ns[0]:
        raise UsageError("cubic decay needs at least 3 grid rates spanning 16x")
    lo, hi = spec.options.get("slope_band", (-0.65, -0.35))
    rep = _report(spec)
    seed = spec.seeds().master_seed
    t = spec.horizon
    ms = []
    for n in ns:
        batch = cache.batch(n, spec.horizon, seed, spec.M)
        zn = _at(cubic_values(batch.increments), grid_index(t, n))
        mean, se = mean_stderr(zn)
        z = _z(mean, 0.0, se)
        rep.add(n=n, t=t, statistic="mean", estimate=mean, stderr=se, target=0.0, z=z,
                passed=abs(z) <= spec.options.get("mean_z", 4.0))
        ms_est, ms_se = mean_stderr(zn * zn)
        rep.add(n=n, t=t, statistic="mean_square", estimate=ms_est, stderr=ms_se,
                target=None, z=None, passed=True)
        ms.append(ms_est)
        rep.jitter_events += cache.jitter_events(n, spec.horizon)
    slope, se, ci = _slope(ns, ms)
    rep.add(statistic="slope", estimate=slope, stderr=se, ci95=list(ci), target=-0.5,
            band=[lo, hi], z=None, passed=lo <= slope <= hi)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def quartic_convergence_study(spec, cache=None):
    """E max_k |V(t_k) - 6 t_k / pi|^2 decreasing in n; mean V(T) near 6T/pi."""
    cache = cache or PathCache()
    ns = sorted(spec.n_list)
    if len(ns) < 3:
        raise UsageError("quartic convergence needs at least 3 grid rates")
    rep = _report(spec)
    T = spec.horizon
    if T == 0:
        for n in ns:
            rep.add(n=n, statistic="sup_sq", estimate=0.0, stderr=0.0, target=0.0, z=0.0, passed=True)
        return rep
    seed = spec.seeds().master_seed
    sups = []
    for n in ns:
        batch = cache.batch(n, T, seed, spec.M)
        k = grid_index(T, n)
        v = quartic_values(batch.increments)[:, :k]
        drift = SIX_OVER_PI * np.arange(1, k + 1) / n
        d = np.max(np.abs(v - drift), axis=1) ** 2  # t = 0 contributes 0
        est, se = mean_stderr(d)
        sups.append((est, se))
        rep.add(n=n, statistic="sup_sq", estimate=est, stderr=se, target=0.0, z=None, passed=True)
        rep.jitter_events += cache.jitter_events(n, T)
    inversions = []
    for i in range(len(sups) - 1):
        (a, sa), (b, sb) = sups[i], sups[i + 1]
        if not b < a:
            inversions.append({"between": [ns[i], ns[i + 1]], "size": b - a,
                               "within_1se": b - a <= math.hypot(sa, sb)})
    monotone = not inversions or (len(inversions) == 1 and inversions[0]["within_1se"])
    rep.add(statistic="decreasing", estimate=len(inversions), inversions=inversions, passed=monotone)
    # V(T) at the finest grid against 6T/pi
    n = ns[-1]
    batch = cache.batch(n, T, seed, spec.M)
    vt = _at(quartic_values(batch.increments), grid_index(T, n))
    est, se = mean_stderr(vt)
    z = _z(est, SIX_OVER_PI * T, se)
    rep.add(n=n, t=T, statistic="mean_V", estimate=est, stderr=se, target=SIX_OVER_PI * T, z=z,
            passed=abs(z) <= spec.tolerance.z)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def kernel_consistency_study(spec, cache=None):
    """Bilinearity identities between the kernel formulas, and K against quadrature."""
    from .oracle import bivariate_expectation

    n = spec.n_list[0] if spec.n_list else 256
    tol = spec.options.get("rel_tol", 1e-12)
    k_tol = spec.options.get("k_tol", 1e-8)
    dt = 1.0 / n
    rep = _report(spec)

    worst_pair = 0.0
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            a = uniform_increment_cov(i, j, dt)
            b = cross_increment_cov((i - 1) * dt, i * dt, (j - 1) * dt, j * dt)
            worst_pair = max(worst_pair, _rel(a, b))
    rep.add(statistic="uniform_vs_cross_max_rel", n=n, estimate=worst_pair, target=tol,
            passed=worst_pair < tol)

    times = np.arange(n + 1) * dt
    worst_var = 0.0
    for k in range(1, n + 1):
        s, t = times[k - 1], times[k]
        via_cov = cov_F(t, t) + cov_F(s, s) - 2.0 * cov_F(s, t)
        worst_var = max(worst_var, _rel(via_cov, increment_variance(s, t)))
    # the variance through cov_F cancels catastrophically; compare at 1e-9 scale
    rep.add(statistic="variance_vs_cov_max_rel", n=n, estimate=worst_var, target=1e-9,
            passed=worst_var < 1e-9)

    worst_row = 0.0
    for i in range(1, n + 1, max(1, n // 32)):
        row = math.fsum(uniform_increment_cov(i, j, dt) for j in range(1, n + 1))
        worst_row = max(worst_row, abs(row - cross_increment_cov(times[i - 1], times[i], 0.0, 1.0)))
    scale = math.sqrt(dt)
    rep.add(statistic="row_sum_max_abs_over_sqrt_dt", n=n, estimate=worst_row / scale, target=tol,
            passed=worst_row / scale < tol * n)

    rhos = [-0.99] + [round(x, 1) for x in np.arange(-0.9, 0.95, 0.1)] + [0.99]
    worst_k = max(abs(float(k_function(r)) - bivariate_expectation("sq_signed", "sq_signed", r))
                  for r in rhos)
    rep.add(statistic="K_vs_quadrature_max_abs", rho_count=len(rhos), estimate=worst_k,
            target=k_tol, passed=worst_k < k_tol)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def kappa_constants_study(spec, cache=None):
    tol = spec.options.get("tol", 1e-10)
    rep = _report(spec)
    for name in spec.variants:
        kc = kappa_sq(name, tol)
        refined = kappa_sq(name, tol / 10)
        stable = abs(refined.kappa_sq - kc.kappa_sq) < tol
        row = rep.add(variant=name, statistic="kappa_sq", estimate=kc.kappa_sq,
                      truncation_error=kc.truncation_error, terms=kc.terms,
                      refined=refined.kappa_sq, stable=stable)
        ok = kc.kappa_sq > kc.truncation_error and kc.truncation_error < tol and stable
        if kc.variant is KappaVariant.RADEMACHER:
            ok = ok and kc.kappa_sq == SIX_OVER_PI and kc.truncation_error == 0.0
        elif kc.variant is KappaVariant.SIGNED:
            series = kc.details["series"]
            row["series"] = series
            row["series_bound"] = signed_squares_series_bound()
            ok = ok and 0 < kc.kappa_sq < SIX_OVER_PI and series <= signed_squares_series_bound() < 1.5
        row["passed"] = ok
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def sampler_law_study(spec, cache=None):
    """Empirical covariance of (F(t_1), ..., F(t_N)) against cov_F, plus shape gates."""
    cache = cache or PathCache()
    n = spec.n_list[0]
    rep = _report(spec)
    seed = spec.seeds().master_seed
    batch = cache.batch(n, spec.horizon, seed, spec.M)
    f = batch.cumulative[:, 1:]
    t = batch.partition.times[1:]
    zmax = 0.0
    for i in range(f.shape[1]):
        for j in range(i, f.shape[1]):
            est, se = mean_stderr(f[:, i] * f[:, j])
            zmax = max(zmax, abs(_z(est, cov_F(t[i], t[j]), se)))
    limit = spec.options.get("cov_z", 4.0)
    rep.add(n=n, statistic="cov_max_abs_z", estimate=zmax, target=limit, passed=zmax <= limit)
    std = batch.increments / np.sqrt(batch.variances)
    skew = np.max(np.abs(scipy.stats.skew(std, axis=0)))
    kurt = np.max(np.abs(scipy.stats.kurtosis(std, axis=0)))
    rep.add(n=n, statistic="max_abs_skewness", estimate=float(skew), target=0.05, passed=skew < 0.05)
    rep.add(n=n, statistic="max_abs_excess_kurtosis", estimate=float(kurt), target=0.1, passed=kurt < 0.1)
    err = cache.factor(n, spec.horizon).reconstruction_error()
    rep.add(n=n, statistic="factor_reconstruction", estimate=err, target=1e-10, passed=err < 1e-10)
    rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def midpoint_identity_study(spec, cache=None):
    """Path-wise F(t_2N)^2 = 2 I_n + sum (dF_2j^2 - dF_2j-1^2) on every sampled path."""
    cache = cache or PathCache()
    n = spec.n_list[0]
    rep = _report(spec)
    seed = spec.seeds().master_seed
    batch = cache.batch(n, spec.horizon, seed, spec.M)
    worst_even = 0.0
    worst_odd = 0.0
    alt = np.empty(len(batch))
    for r in range(len(batch)):
        path = batch[r]
        res = midpoint_identity_residuals(path)
        even = path.increments[: 2 * (path.size // 2)]
        alt[r] = math.fsum(even[1::2] ** 2 - even[0::2] ** 2)
        f2 = path.cumulative ** 2
        scale = np.maximum(1.0, f2)
        worst_even = max(worst_even, float(np.max(np.abs(res[::2]) / scale[::2])))
        snapped = f2[1::2] - f2[0:-1:2][: f2[1::2].size]
        worst_odd = max(worst_odd, float(np.max(np.abs(res[1::2] - snapped))) if snapped.size else 0.0)
    rep.add(n=n, paths=len(batch), statistic="max_rel_residual_even", estimate=worst_even,
            target=1e-10, passed=worst_even < 1e-10)
    rep.add(n=n, paths=len(batch), statistic="max_abs_residual_odd_vs_snapped", estimate=worst_odd,
            target=1e-12, passed=worst_odd < 1e-12)
    # informational: the alternating sum divided by kappa, whose limit is a standard Brownian motion
    kappa = kappa_target("alternating") ** 0.5
    m, se = mean_stderr(alt / kappa)
    rep.add(n=n, paths=len(batch), statistic="kappa_scaled_alternating_sum_mean_square",
            estimate=float(np.mean((alt / kappa) ** 2)), mean=m, stderr=se, kappa=kappa,
            kappa_scaled=True, target=None, passed=True)
    rep.jitter_events += cache.jitter_events(n, spec.horizon)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


def family_check_study(spec, cache=None):
    from .oracle import check_assumption31
    from .variations import HFamily

    grid = spec.options.get("rho_grid", [-0.9, -0.5, -0.1, 0.0, 0.1, 0.5, 0.9])
    rep = _report(spec)
    for name in spec.variants:
        variant = KappaVariant.parse(name)
        if variant is KappaVariant.RADEMACHER:
            fam = HFamily.rademacher(spec.master_seed or 0, 8)
        else:
            fam = HFamily.of(variant)
        res = check_assumption31(fam, grid)
        ok = res.passed
        if variant is KappaVariant.SIGNED:
            ok = ok and res.fitted_L <= 5.0
        rep.add(variant=name, statistic="family_checks", mean_abs=res.mean_abs, fitted_L=res.fitted_L,
                derivative_lipschitz=res.derivative_lipschitz, passed=ok)
    rep.passed = all(r["passed"] for r in rep.rows)
    return rep


STUDIES = {
    "second_moment": second_moment_study,
    "fourth_moment_scaling": fourth_moment_scaling,
    "normality": normality_study,
    "independence": independence_study,
    "cubic_decay": cubic_decay_study,
    "quartic_convergence": quartic_convergence_study,
    "kernel_consistency": kernel_consistency_study,
    "kappa_constants": kappa_constants_study,
    "sampler_law": sampler_law_study,
    "midpoint_identity": midpoint_identity_study,
    "family_checks": family_check_study,
}


def run_study(spec, cache=None):
    start = time.perf_counter()
    rep = STUDIES[spec.kind](spec, cache)
    rep.wall_clock_seconds = time.perf_counter() - start
    return rep


# --------------------------------------------------------------------------
# spec documents


def build_metadata():
    from . import __version__

    return {
        "heatvar": __version__,
        "backend": _backend.current(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def parse_spec(doc, seed=None):
    """Studies from a spec document; ``seed`` overrides the document's master seed."""
    if not isinstance(doc, dict):
        raise UsageError("spec: expected a JSON object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UsageError(f"spec.schema_version: unsupported version {version!r}")
    studies = doc.get("studies")
    if not isinstance(studies, list) or not studies:
        raise UsageError("spec.studies: expected a nonempty list")
    master = doc.get("master_seed") if seed is None else seed
    defaults = {"master_seed": master}
    if "tolerance" in doc:
        defaults["tolerance"] = doc["tolerance"]
    out = []
    for i, s in enumerate(studies):
        spec = ExperimentSpec.from_json(s, defaults, where=f"spec.studies[{i}]")
        if seed is not None:
            spec = ExperimentSpec.from_json({**s, "master_seed": seed}, defaults,
                                            where=f"spec.studies[{i}]")
        if spec.stochastic:
            spec.seeds()
        out.append(spec)
    return out


def run_spec(doc, threads=1, seed=None, log=None):
    """Run every study in a spec document; returns the report document."""
    specs = parse_spec(doc, seed)
    cache = PathCache(threads)
    for s in specs:
        if s.stochastic and s.horizon > 0:
            for n in s.n_list:
                cache.reserve(n, s.horizon, s.master_seed, s.M)
    start = time.perf_counter()
    reports = []
    for s in specs:
        rep = run_study(s, cache)
        reports.append(rep)
        if log is not None:
            log(f"{s.id or s.kind}: {'PASS' if rep.passed else 'FAIL'} ({rep.wall_clock_seconds:.1f}s)")
    criteria = {}
    for rep in reports:
        c = rep.spec.criterion
        if c is not None:
            criteria[str(c)] = criteria.get(str(c), True) and rep.passed
    return {
        "schema_version": SCHEMA_VERSION,
        "master_seed": doc.get("master_seed") if seed is None else seed,
        "build": build_metadata(),
        "studies": [r.to_json() for r in reports],
        "criteria": criteria,
        "passed": all(r.passed for r in reports),
        "jitter_events": sum(r.jitter_events for r in reports),
        "wall_clock_seconds": time.perf_counter() - start,
    }


def strip_wall_clock(report):
    """Copy of a report document without its wall-clock fields."""
    if isinstance(report, dict):
        return {k: strip_wall_clock(v) for k, v in report.items() if k != "wall_clock_seconds"}
    if isinstance(report, list):
        return [strip_wall_clock(v) for v in report]
    return report


def _describe(row):
    parts = [str(row[k]) for k in ("variant",) if k in row]
    if "s" in row and "t" in row:
        parts.append(f"[{row['s']:g},{row['t']:g}]")
    if "r" in row:
        parts.append(f"r={row['r']:g}")
    parts.append(str(row.get("statistic", "")))
    est = row.get("estimate")
    if isinstance(est, float):
        parts.append(f"{est:.4g}")
    if isinstance(row.get("z"), float):
        parts.append(f"z={row['z']:.2f}")
    return " ".join(parts)


def criterion_lines(report):
    """One human-readable verdict line per criterion in a report document."""
    by = {}
    for st in report["studies"]:
        if st["criterion"] is not None:
            by.setdefault(int(st["criterion"]), []).append(st)
    lines = []
    for c in sorted(by):
        sts = by[c]
        ok = all(st["passed"] for st in sts)
        names = ",".join(st["id"] or st["kind"] for st in sts)
        line = f"criterion {c:>2} {names}: {'PASS' if ok else 'FAIL'}"
        bad = [_describe(r) for st in sts for r in st["rows"] if r.get("passed") is False]
        if bad:
            line += " (" + "; ".join(bad) + ")"
        lines.append(line)
    return lines


def summary_rows(report):
    """Flat CSV-ready rows, one per report row."""
    out = []
    for st in report["studies"]:
        for r in st["rows"]:
            out.append({"study": st["id"] or st["kind"], "criterion": st["criterion"], **r})
    return out
