"""Tail and small-value statistics of the one-point law ``u_t(x)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import ConfigurationError, InsufficientDataError, PositivityError, PreconditionError

MIN_COUNT = 10


# ---------------------------------------------------------------------------
# upper tails


@dataclass(frozen=True)
class TailFitReport:
    """Regression of the log survival function on the case's regressor.

    Case 1 uses ``P(u > lambda)`` against ``(log lambda)^(3/2)``; case 2 uses
    ``P(u > center + lambda)`` against ``lambda^2``.  Only grid points with at
    least ``MIN_COUNT`` exceedances enter; ``truncated`` records whether the
    requested grid had to be cut.
    """

    case: int
    lambda_grid: tuple
    counts: tuple
    log_surv: tuple
    regressor: tuple
    slope: float
    intercept: float
    r2: float
    truncated: bool
    dropped: tuple
    n_samples: int
    censored: int

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _regressor(case, lam):
    lam = np.asarray(lam, dtype=float)
    return np.log(lam) ** 1.5 if case == 1 else lam**2


def survival_counts(samples, levels, censored=0):
    """``#{u > level}`` for each level; censored paths count as exceedances."""
    s = np.sort(np.asarray(samples, dtype=float))
    return s.size - np.searchsorted(s, levels, side="right") + censored


def survival_curve(samples, lambda_grid, case, center=1.0, censored=0, min_samples=10_000) -> TailFitReport:
    """Empirical survival probabilities and the case-specific linear fit."""
    if case not in (1, 2):
        raise ConfigurationError("case must be 1 or 2")
    s = np.asarray(samples, dtype=float)
    N = s.size + censored
    if N < min_samples:
        raise InsufficientDataError(f"tail fits need at least {min_samples} samples, got {N}")
    lam = np.asarray(lambda_grid, dtype=float)
    if case == 1 and np.any(lam <= 1):
        raise PreconditionError("case 1 tail levels must exceed 1")
    levels = lam if case == 1 else center + lam
    counts = survival_counts(s, levels, censored)
    ok = counts >= MIN_COUNT
    lam_ok, c_ok = lam[ok], counts[ok]
    if lam_ok.size < 3:
        raise InsufficientDataError("fewer than three resolvable tail levels")
    y = np.log(c_ok / N)
    x = _regressor(case, lam_ok)
    fit = sps.linregress(x, y)
    return TailFitReport(
        case,
        tuple(lam_ok.tolist()),
        tuple(int(c) for c in c_ok),
        tuple(y.tolist()),
        tuple(x.tolist()),
        float(fit.slope),
        float(fit.intercept),
        float(fit.rvalue**2),
        bool((~ok).any()),
        tuple(lam[~ok].tolist()),
        int(N),
        int(censored),
    )


def resolvable_grid(samples, case, n_points=12, center=1.0, start_quantile=0.5, min_count=MIN_COUNT, censored=0):
    """Evenly spaced tail levels from a sample quantile up to the deepest resolvable level.

    The top level is the ``min_count``-th largest value, so every grid point
    has at least ``min_count`` exceedances.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    N = s.size + censored
    top = s[-(min_count - censored) - 1] if min_count > censored else s[-1]
    lo = float(np.quantile(s, start_quantile))
    if case == 1:
        lo = max(lo, 1.0 + 1e-9)
        if not top > lo:
            raise InsufficientDataError(f"sample resolves no tail level above {lo:.4g}")
        return np.exp(np.linspace(np.log(lo), np.log(top), n_points + 1)[1:])
    if not top > lo:
        raise InsufficientDataError(f"sample resolves no tail level above {lo:.4g}")
    return np.linspace(lo - center, top - center, n_points + 1)[1:]


def ks_normal(samples, mean, var, alpha=0.01):
    """Kolmogorov-Smirnov distance to ``Normal(mean, var)`` and its ``alpha`` critical value."""
    s = np.asarray(samples, dtype=float)
    d = float(sps.kstest(s, "norm", args=(mean, math.sqrt(var))).statistic)
    crit = float(sps.kstwo.ppf(1 - alpha, s.size))
    return d, crit


# ---------------------------------------------------------------------------
# small balls


@dataclass(frozen=True)
class SmallBallPoint:
    eps: float
    count: int
    prob: float | None
    ci: tuple
    normalized: float | None
    normalized_ci: tuple
    upper_bound_only: bool
    weighted: bool
    ess: float | None = None

    def to_dict(self):
        return dict(self.__dict__, ci=list(self.ci), normalized_ci=list(self.normalized_ci))


@dataclass(frozen=True)
class SmallBallReport:
    points: tuple
    n_samples: int
    nonpositive: int
    moment_estimates: tuple = field(default=())

    @property
    def eps_grid(self):
        return tuple(p.eps for p in self.points)

    @property
    def normalized(self):
        return tuple(p.normalized for p in self.points)

    def point(self, eps):
        for p in self.points:
            if math.isclose(p.eps, eps):
                return p
        raise KeyError(eps)

    def monotone(self):
        """Is the normalized curve non-increasing as eps decreases, up to CI overlap?"""
        pts = sorted(self.points, key=lambda p: -p.eps)
        pts = [p for p in pts if p.eps < 1]
        return all(b.normalized_ci[0] <= a.normalized_ci[1] for a, b in zip(pts, pts[1:]))

    def to_dict(self):
        return {
            "points": [p.to_dict() for p in self.points],
            "n_samples": self.n_samples,
            "nonpositive": self.nonpositive,
            "moment_estimates": [list(m) for m in self.moment_estimates],
        }


def clopper_pearson(count, n, level=0.95):
    a = 1 - level
    lo = 0.0 if count == 0 else float(sps.beta.ppf(a / 2, count, n - count + 1))
    hi = 1.0 if count == n else float(sps.beta.ppf(1 - a / 2, count + 1, n - count))
    return lo, hi


def _normalize(p, eps):
    if eps >= 1:
        return None
    if p is None or p <= 0:
        return -math.inf
    return math.log(p) / abs(math.log(eps))


def small_ball_point(samples, eps, log_weights=None, level=0.95) -> SmallBallPoint:
    """``P(u < eps)`` with a confidence interval.

    Plain samples use Clopper-Pearson; a zero count yields only the one-sided
    upper bound ``1 - (1 - level)^(1/N)``.  With ``log_weights`` (likelihood
    ratios of an importance sampler) the estimate is the weighted mean and the
    interval is normal on the log scale.  ``ess`` is the effective sample
    size of the weighted hits; a value near 1 means the weights degenerated.
    """
    if not eps > 0:
        raise PreconditionError(f"eps must be positive, got {eps}")
    s = np.asarray(samples, dtype=float)
    hit = s < eps
    count = int(hit.sum())
    N = s.size
    if log_weights is None:
        if count == 0:
            hi = 1.0 - (1.0 - level) ** (1.0 / N)
            return SmallBallPoint(eps, 0, 0.0, (0.0, hi), None, (-math.inf, _normalize(hi, eps)), True, False)
        p = count / N
        lo, hi = clopper_pearson(count, N, level)
        return SmallBallPoint(eps, count, p, (lo, hi), _normalize(p, eps), (_normalize(lo, eps), _normalize(hi, eps)), False, False)
    lw = np.asarray(log_weights, dtype=float)
    if lw.shape != s.shape:
        raise PreconditionError("log_weights must match samples")
    if count < 2:
        raise InsufficientDataError(f"importance sampler hit eps={eps} only {count} times")
    ref = float(lw[hit].max())
    z = np.where(hit, np.exp(lw - ref), 0.0)
    m = float(z.mean())
    rel = float(z.std(ddof=1) / math.sqrt(N)) / m
    ess = float(z.sum() ** 2 / np.sum(z * z))
    q = float(sps.norm.ppf(0.5 + level / 2))
    logp = math.log(m) + ref
    lo, hi = logp - q * rel, logp + q * rel
    if eps >= 1:
        norm, nci = None, (None, None)
    else:
        scale = abs(math.log(eps))
        norm, nci = logp / scale, (lo / scale, hi / scale)
    return SmallBallPoint(eps, count, math.exp(logp), (math.exp(lo), math.exp(hi)), norm, nci, False, True, ess)


def small_ball_curve(samples, eps_grid, log_weights=None, level=0.95, moment_k=(1, 2, 4)) -> SmallBallReport:
    """``log P(u < eps) / |log eps|`` for each ``eps`` in the grid.

    ``log_weights`` may be a single array for all levels or a mapping from
    ``eps`` to ``(samples, log_weights)`` pairs drawn from level-specific
    importance samplers; levels missing from the mapping use the plain sample.
    """
    s = np.asarray(samples, dtype=float)
    nonpos = int(np.count_nonzero(s <= 0))
    pts = []
    for eps in eps_grid:
        if isinstance(log_weights, dict) and eps in log_weights:
            ss, lw = log_weights[eps]
            pts.append(small_ball_point(ss, eps, lw, level))
        elif isinstance(log_weights, dict) or log_weights is None:
            pts.append(small_ball_point(s, eps, None, level))
        else:
            pts.append(small_ball_point(s, eps, log_weights, level))
    moments = ()
    if nonpos == 0 and not (log_weights is not None and not isinstance(log_weights, dict)):
        moments = tuple((k, float(np.mean(s ** (-float(k))))) for k in moment_k)
    return SmallBallReport(tuple(pts), int(s.size), nonpos, moments)


# ---------------------------------------------------------------------------
# negative moments


@dataclass(frozen=True)
class NegativeMoment:
    k: float
    estimate: float
    ci: tuple
    stabilized: float
    stabilized_ci: tuple
    dominated: bool

    def to_dict(self):
        return dict(self.__dict__, ci=list(self.ci), stabilized_ci=list(self.stabilized_ci))


def _stabilize(k, value):
    if value <= 0:
        return -math.inf
    return (math.log(k) / k) ** 3 * math.log(value)


def negative_moments(samples, k_list, level=0.95) -> list[NegativeMoment]:
    """``E[u^-k]`` with jackknife intervals and the ``(log k / k)^3 log E[u^-k]`` sequence.

    ``dominated`` flags estimates where the single largest term carries more
    than half of the sum, the usual sign that the sample has not resolved the
    moment.
    """
    s = np.asarray(samples, dtype=float)
    if np.any(s <= 0):
        raise PositivityError(f"{int(np.count_nonzero(s <= 0))} nonpositive samples")
    if s.size < 2:
        raise InsufficientDataError("need at least two samples")
    q = float(sps.norm.ppf(0.5 + level / 2))
    out = []
    for k in k_list:
        if not 1 <= k <= 20:
            raise PreconditionError(f"k={k} outside [1, 20]")
        terms = s ** (-float(k))
        total = float(terms.sum())
        n = terms.size
        est = total / n
        # leave-one-out means; for a plain mean this reproduces the usual SE
        loo = (total - terms) / (n - 1)
        se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
        ci = (est - q * se, est + q * se)
        sci = tuple(_stabilize(k, v) for v in ci)
        out.append(NegativeMoment(float(k), est, ci, _stabilize(k, est), sci, bool(terms.max() > 0.5 * total)))
    return out


# ---------------------------------------------------------------------------
# lower envelope


@dataclass(frozen=True)
class EnvelopeRow:
    n: float
    threshold: float
    count: int
    n_fields: int
    frequency: float

    @property
    def scaled(self):
        return self.frequency * self.n**2


def envelope_threshold(zeta, n):
    return math.exp(-zeta * math.log(n) ** (2.0 / 3.0))


def window_infimum(field, lo, hi):
    """Minimum grid value over ``lo < x < hi`` (non-periodic)."""
    grid = field.grid
    if hi > grid.length * (1 + 1e-12) or lo < 0:
        raise ConfigurationError(f"window ({lo}, {hi}) lies outside the simulated domain [0, {grid.length}]")
    x = grid.x
    sel = (x > lo) & (x < hi)
    return float(field.values[sel].min())


def lower_envelope_check(fields, zeta, n_grid) -> list[EnvelopeRow]:
    """Frequency of ``inf_{n < x < 2n} u(x) < exp(-zeta (log n)^(2/3))`` for each ``n``."""
    ns = list(n_grid)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise PreconditionError("n_grid must be increasing")
    rows = []
    for n in ns:
        thr = envelope_threshold(zeta, n) if n > 1 else 1.0
        infs = [window_infimum(f, n, 2 * n) for f in fields]
        count = int(sum(v < thr for v in infs))
        rows.append(EnvelopeRow(float(n), thr, count, len(infs), count / max(len(infs), 1)))
    return rows
