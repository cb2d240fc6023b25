"""Level-set geometry of spatial profiles.

Profiles are read on ``[0, R]`` as the piecewise-linear interpolant of the grid
values.  ``R`` never wraps around the periodic domain: intervals touching 0 or
``R`` without a level crossing are not islands and are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    PreconditionError,
    QuantileResolutionError,
)


# ---------------------------------------------------------------------------
# gauges


@dataclass(frozen=True)
class GaugeCase:
    """``case`` is 1 (linear sigma) or 2 (bounded sigma)."""

    case: int
    alpha: float

    def __post_init__(self):
        if self.case not in (1, 2):
            raise ConfigurationError(f"gauge case must be 1 or 2, got {self.case!r}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha!r}")


def log_plus(R):
    """``log(max(R, e))``."""
    return np.log(np.maximum(R, math.e))


def gauge(case: GaugeCase, R):
    """``exp(alpha log_+(R)^(2/3))`` in case 1, ``alpha log_+(R)^(1/2)`` in case 2."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise PreconditionError("R must be positive")
    lp = log_plus(R)
    out = np.exp(case.alpha * lp ** (2.0 / 3.0)) if case.case == 1 else case.alpha * np.sqrt(lp)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True, eq=False)
class Profile:
    """Piecewise-linear function through ``(xs[k], fs[k])`` on ``[xs[0], xs[-1]]``."""

    xs: np.ndarray
    fs: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        fs = np.asarray(self.fs, dtype=float)
        if xs.ndim != 1 or xs.shape != fs.shape or xs.size < 2:
            raise PreconditionError("profile needs matching 1-d arrays of at least 2 points")
        if np.any(np.diff(xs) <= 0):
            raise PreconditionError("profile abscissae must be increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "fs", fs)

    @property
    def spacing(self):
        return float(np.min(np.diff(self.xs)))

    def __call__(self, x):
        return np.interp(x, self.xs, self.fs)


def as_profile(field, R=None, slack=0.0) -> Profile:
    """Restrict a snapshot (or a :class:`Profile`) to ``[0, R]``.

    For snapshots the grid is read periodically, so the point ``x = R`` may be
    the seam image of ``x = 0`` when ``R = L``.  ``R + slack`` must not exceed
    the domain length.
    """
    if isinstance(field, Profile):
        if R is None:
            return field
        if R > field.xs[-1] - field.xs[0] + 1e-12:
            raise ConfigurationError(f"R={R} exceeds the profile extent")
        keep = field.xs <= field.xs[0] + R + 1e-12
        xs, fs = field.xs[keep], field.fs[keep]
        end = field.xs[0] + R
        if xs[-1] < end - 1e-12:
            xs = np.append(xs, end)
            fs = np.append(fs, field(end))
        return Profile(xs, fs)
    grid = field.grid
    R = grid.length if R is None else float(R)
    if not R > 0:
        raise ConfigurationError(f"R must be positive, got {R}")
    if R + slack > grid.length * (1 + 1e-12):
        raise ConfigurationError(f"R={R} plus slack {slack} exceeds the domain length {grid.length}")
    dx = grid.dx
    m = int(math.floor(R / dx + 1e-9))
    idx = np.arange(m + 1)
    xs = idx * dx
    fs = field.values[idx % grid.nx]
    if R - xs[-1] > 1e-9 * dx:
        frac = (R - xs[-1]) / dx
        nxt = field.values[(m + 1) % grid.nx]
        xs = np.append(xs, R)
        fs = np.append(fs, fs[-1] + frac * (nxt - fs[-1]))
    return Profile(xs, fs)


def _field_spacing(field):
    return field.grid.dx if not isinstance(field, Profile) else field.spacing


# ---------------------------------------------------------------------------
# exceedance sets


def level_measure(profile: Profile, level) -> float:
    """Lebesgue measure of ``{x : f(x) >= level}`` for the linear interpolant."""
    f0, f1 = profile.fs[:-1], profile.fs[1:]
    h = np.diff(profile.xs)
    lo, hi = np.minimum(f0, f1), np.maximum(f0, f1)
    full = lo >= level
    part = (hi >= level) & ~full
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(part, (hi - level) / (hi - lo), 0.0)
    return float(np.sum(h[full]) + np.sum((h * frac)[part]))


def exceedance_measure(field, R, case: GaugeCase, slack=0.0) -> float:
    """``|{x in [0, R] : field(x) >= g_alpha(R)}|``."""
    return level_measure(as_profile(field, R, slack), gauge(case, R))


@dataclass(frozen=True)
class ScalingReport:
    """Median exceedance measure per ``R`` and the log-log slope.

    ``slope`` and its interval are ``None`` when some median is zero; the
    empty-set frequencies are always filled in.
    """

    R: tuple
    medians: tuple
    empty_frequency: tuple
    slope: float | None
    ci: tuple | None
    n_fields: tuple

    def to_dict(self):
        return {
            "R": list(self.R),
            "medians": list(self.medians),
            "empty_frequency": list(self.empty_frequency),
            "slope": self.slope,
            "ci": None if self.ci is None else list(self.ci),
            "n_fields": list(self.n_fields),
        }


def _ls_slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def exceedance_scaling(measures_by_R, n_boot=2000, level=0.95, seed=0) -> ScalingReport:
    """Least-squares slope of ``log median |E_alpha(R)|`` against ``log R``.

    ``measures_by_R`` maps ``R`` to the ensemble of measured set sizes.  The
    interval is a percentile bootstrap that resamples fields within each ``R``.
    """
    Rs = sorted(measures_by_R)
    if len(Rs) < 2:
        raise InsufficientDataError("need at least two values of R")
    samples = [np.asarray(measures_by_R[R], dtype=float) for R in Rs]
    medians = tuple(float(np.median(s)) for s in samples)
    empty = tuple(float(np.mean(s <= 0)) for s in samples)
    n = tuple(int(s.size) for s in samples)
    if min(medians) <= 0:
        return ScalingReport(tuple(Rs), medians, empty, None, None, n)
    logR = np.log(Rs)
    slope = _ls_slope(logR, np.log(medians))
    rng = np.random.Generator(np.random.PCG64(seed))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        meds = [np.median(s[rng.integers(0, s.size, s.size)]) for s in samples]
        boots[b] = _ls_slope(logR, np.log(np.maximum(meds, 1e-300)))
    a = (1 - level) / 2
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))
    return ScalingReport(tuple(Rs), medians, empty, slope, ci, n)


# ---------------------------------------------------------------------------
# islands


@dataclass(frozen=True)
class IslandRecord:
    left: float
    right: float
    peak: float
    a: float
    b: float

    @property
    def length(self):
        return self.right - self.left

    def to_dict(self):
        return {"left": self.left, "right": self.right, "length": self.length, "peak": self.peak, "a": self.a, "b": self.b}


def _check_levels(a, b):
    if not (1 < a < b):
        raise PreconditionError(f"island levels need 1 < a < b, got a={a}, b={b}")


def find_islands(field, a, b, R=None, min_length=None) -> list[IslandRecord]:
    """All ``(a, b)``-islands of the interpolated field inside ``[0, R]``.

    An island is a maximal interval whose endpoints are crossings of level
    ``a``, on whose interior the field is strictly above ``a``, and whose
    maximum exceeds ``b``.  Islands shorter than ``min_length`` (default two
    grid cells) are dropped as unresolved.
    """
    _check_levels(a, b)
    prof = as_profile(field, R)
    if min_length is None:
        min_length = 2.0 * _field_spacing(field)
    xs, fs = prof.xs, prof.fs
    above = fs > a
    out = []
    k, n = 0, xs.size
    while k < n - 1:
        # an island opens on the segment (k, k+1) where f goes from <= a to > a
        if above[k] or not above[k + 1]:
            k += 1
            continue
        left = xs[k] + (a - fs[k]) / (fs[k + 1] - fs[k]) * (xs[k + 1] - xs[k])
        j = k + 1
        while j < n and above[j]:
            j += 1
        if j == n:
            break  # runs into R without coming back down
        right = xs[j - 1] + (fs[j - 1] - a) / (fs[j - 1] - fs[j]) * (xs[j] - xs[j - 1])
        peak = float(np.max(fs[k + 1 : j]))
        if peak > b and right - left >= min_length:
            out.append(IslandRecord(float(left), float(right), peak, float(a), float(b)))
        k = j
    return out


def longest_island(field, a, b, R=None, min_length=None) -> float:
    """``J(a, b; R)``: length of the longest island, 0 if there is none."""
    return max((isl.length for isl in find_islands(field, a, b, R, min_length)), default=0.0)


# ---------------------------------------------------------------------------
# sojourn statistic


class UpperQuantile:
    """Empirical ``G(p) = sup{b : P(Y >= b) >= p}`` from a calibration sample.

    The calibration sample must be independent of the fields it is applied
    to.  Levels with ``p * N < min_count`` are refused.
    """

    def __init__(self, sample, min_count=10):
        s = np.sort(np.asarray(sample, dtype=float).ravel())[::-1]
        if s.size == 0:
            raise InsufficientDataError("empty calibration sample")
        self.sorted_desc = s
        self.min_count = min_count

    @property
    def size(self):
        return self.sorted_desc.size

    def __call__(self, p):
        if not 0 < p <= 1:
            raise PreconditionError(f"probability level must be in (0, 1], got {p}")
        if p * self.size < self.min_count:
            raise QuantileResolutionError(
                f"level {p:.3g} needs at least {math.ceil(self.min_count / p)} calibration values, have {self.size}"
            )
        k = math.ceil(p * self.size - 1e-9)
        return float(self.sorted_desc[k - 1])

    def survival(self, b):
        """Empirical ``P(Y >= b)``."""
        asc = self.sorted_desc[::-1]
        return float(self.size - np.searchsorted(asc, b, side="left")) / self.size


@dataclass(frozen=True)
class SojournResult:
    alpha: float
    n: int
    ell: float
    value: float
    threshold_used: float
    normalized: float


def sojourn_statistic(field, ell, n, alpha, quantile_fn, expected=None) -> SojournResult:
    """Riemann-sum measure of ``{x in [0, n ell) : Y(x) >= G((n ell)^(-alpha))}``.

    ``normalized`` divides by ``expected`` when given, otherwise by the
    stationary estimate ``n ell P(Y >= threshold)`` from the calibration sample.
    """
    if not 0 < alpha < 0.5:
        raise PreconditionError(f"alpha must lie in (0, 1/2), got {alpha}")
    if ell < 1:
        raise PreconditionError(f"block width ell must be >= 1, got {ell}")
    if n < 1:
        raise PreconditionError("n must be positive")
    span = n * ell
    thr = quantile_fn(span ** (-alpha))
    vals, dx = _grid_values(field, span)
    value = dx * float(np.count_nonzero(vals >= thr))
    if expected is None:
        expected = span * quantile_fn.survival(thr)
    return SojournResult(float(alpha), int(n), float(ell), value, thr, value / expected)


def _grid_values(field, span):
    """Grid values at ``x = i dx`` for ``0 <= x < span``."""
    if isinstance(field, Profile):
        keep = field.xs < field.xs[0] + span - 1e-12
        if field.xs[-1] - field.xs[0] < span - 1e-9 * span:
            raise ConfigurationError(f"span {span} exceeds the profile extent")
        return field.fs[keep], field.spacing
    grid = field.grid
    if span > grid.length * (1 + 1e-12):
        raise ConfigurationError(f"span {span} exceeds the domain length {grid.length}")
    m = int(math.ceil(span / grid.dx - 1e-9))
    return field.values[:m], grid.dx


def block_integrals(field, ell, n, threshold):
    """``Z_j = |{x in [j ell, (j+1) ell) : Y(x) >= threshold}|`` for ``j < n`` (Riemann sums)."""
    vals, dx = _grid_values(field, n * ell)
    x = np.arange(vals.size) * dx
    j = np.minimum((x / ell + 1e-9).astype(int), n - 1)
    return np.bincount(j, weights=(vals >= threshold) * dx, minlength=n)


def block_moment_components(Z, k):
    """``(total, odd, even)`` normalized ``L^k`` norms of the centered block sums.

    ``Z`` holds one row of ``n`` block integrals per realization.  Odd and
    even blocks are each sums of independent terms for a field in the lag
    class of the block width; ``total`` is the norm of their sum.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    M, n = Z.shape
    if n < 4:
        raise InsufficientDataError(f"need at least 4 blocks, got {n}")
    if M < 2:
        raise InsufficientDataError("need at least 2 realizations")
    if k < 2 or k % 2:
        raise PreconditionError(f"k must be an even integer >= 2, got {k}")
    mu = float(Z.mean())
    if mu == 0:
        raise InsufficientDataError("block integrals are all zero")
    C = Z - mu
    s_odd = C[:, 1::2].sum(axis=1)
    s_even = C[:, 0::2].sum(axis=1)
    norm = lambda s: float(np.mean(np.abs(s) ** k) ** (1.0 / k)) / (n * mu)
    return norm(s_odd + s_even), norm(s_odd), norm(s_even)


def block_moment_estimate(Z, k=2) -> float:
    """Estimate ``|| Y / E Y - 1 ||_k`` for ``Y = sum_j Z_j`` from odd and even block sums."""
    return block_moment_components(Z, k)[0]


# ---------------------------------------------------------------------------
# good / bad index scan


@dataclass(frozen=True)
class ScanResult:
    flags: tuple
    max_bad_gap: int
    positions: tuple

    @property
    def good_fraction(self):
        return float(np.mean(self.flags)) if self.flags else 0.0

    def to_dict(self):
        return {"flags": list(self.flags), "max_bad_gap": self.max_bad_gap, "positions": list(self.positions)}


def longest_run(flags) -> int:
    best = run = 0
    for bad in flags:
        run = run + 1 if bad else 0
        best = max(best, run)
    return best


def good_index_scan(field, a, b, delta, spacing_const, R) -> ScanResult:
    """Flag indices ``j`` with ``Y(x_j), Y(x_{j+2}) < a - delta`` and ``Y(x_{j+1}) > b + delta``.

    Sample points are ``x_j = c j log R`` inside ``[0, R]``.  ``max_bad_gap``
    is the longest run of consecutive bad indices.
    """
    _check_levels(a, b)
    if not spacing_const > 0:
        raise ConfigurationError("spacing constant must be positive")
    if not (delta >= 0 and a - 2 * delta > 1):
        raise PreconditionError(f"delta={delta} too large for a={a}")
    step = spacing_const * math.log(R)
    if not step > 0:
        raise ConfigurationError("R must exceed 1")
    npts = int(math.floor(R / step + 1e-9)) + 1
    if npts - 2 < 6:
        raise ConfigurationError(f"only {max(npts - 2, 0)} indices fit in [0, {R}]; need 6")
    prof = as_profile(field, R)
    pos = np.arange(npts) * step
    y = prof(pos)
    low = y < a - delta
    high = y > b + delta
    flags = low[:-2] & high[1:-1] & low[2:]
    return ScanResult(tuple(bool(f) for f in flags), longest_run(~flags), tuple(float(p) for p in pos[:-2]))
