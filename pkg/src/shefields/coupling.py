"""Coupling between the full solution and windowed Picard iterates.

Each path draws one noise grid and evaluates ``u`` and every requested
``U^(beta, n)`` on it, recording ``u - U`` at a fixed set of equispaced sites.
The differences feed the moment report, the correlation-length search and
the lag checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import solver
from .ensemble import CENSOR_CAP, Ensemble, run_paths
from .errors import (
    ConfigurationError,
    DegenerateEnsembleError,
    InsufficientPathsError,
    PreconditionError,
)
from .io import write_csv, write_json
from .noise import (
    GridSpec,
    resample_inside_window,
    resample_outside_window,
    sample_noise_grid,
    steps_for,
)

DEFAULT_SCHEDULE = (1, 2, 3, 4, 6, 8, 12, 16)
N_SITES = 32


def coupling_domain(t, beta_max, factor=6.0):
    """Domain length ``2 sqrt(beta_max t) + factor sqrt(t)``.

    Keeps the widest localization window well inside the period and leaves
    the usual margin for wrap-around of the full solution.
    """
    return 2.0 * math.sqrt(beta_max * t) + factor * math.sqrt(t)


def equispaced_sites(nx, count=N_SITES):
    count = min(count, nx)
    return np.unique((np.arange(count) * nx) // count)


# ---------------------------------------------------------------------------
# lag witnesses


@dataclass(frozen=True)
class LagClassWitness:
    """``U^(beta, n)_t`` belongs to the lag class of ``lag``.

    ``lag = 2 n sqrt(beta t) + slack_cells dx`` with ``slack_cells = n r``,
    ``r`` the kernel truncation radius in cells.
    """

    lag: float
    beta: float
    n: int
    slack_cells: int
    t: float
    dx: float

    def __post_init__(self):
        if not self.lag > 0:
            raise ConfigurationError(f"lag must be positive, got {self.lag}")

    @classmethod
    def for_picard(cls, spec: GridSpec, beta, n, t):
        slack = int(n) * solver.KernelRow.for_grid(spec).r_cells
        lag = 2 * n * math.sqrt(beta * t) + slack * spec.dx
        return cls(float(lag), float(beta), int(n), slack, float(t), spec.dx)

    @property
    def cone_radius(self):
        """``n sqrt(beta t)`` plus the slack: half the lag."""
        return 0.5 * self.lag

    def cone_cells(self):
        return int(math.ceil(self.cone_radius / self.dx - 1e-9))

    def to_dict(self):
        return dict(self.__dict__)


def cone_grid(witness: LagClassWitness, dt, margin_cells=8):
    """A grid whose period comfortably exceeds the witness cone diameter."""
    nx = 2 * witness.cone_cells() + 2 * margin_cells + 1
    return GridSpec(nx=nx, length=nx * witness.dx, dt=dt, nt=steps_for(witness.t, dt))


@dataclass(frozen=True)
class ConeTestResult:
    outside_identical: bool
    inside_change_rate: float | None
    trials: int
    radius_cells: int


def cone_test(spec, sigma, t, beta, n, noise_seed, center=None, radius_cells=None, inside_trials=0, seed2_base=None):
    """Exact dependence-cone check for ``U^(beta, n)_t(center)``.

    Noise outside ``radius_cells`` (default: the witness cone) is redrawn and
    the value must not change by a single bit.  With ``inside_trials`` the
    noise strictly inside the radius is redrawn that many times and the
    fraction of trials that change the value is reported.
    """
    center = spec.nx // 2 if center is None else center
    w = LagClassWitness.for_picard(spec, beta, n, t)
    radius = w.cone_cells() if radius_cells is None else radius_cells
    noise = sample_noise_grid(spec, noise_seed)
    base = solver.solve_picard(spec, sigma, noise, t, beta, n).values[center]
    seed2_base = noise_seed + 1_000_003 if seed2_base is None else seed2_base
    other = resample_outside_window(noise, center, radius, seed2_base)
    same = solver.solve_picard(spec, sigma, other, t, beta, n).values[center] == base
    rate = None
    if inside_trials:
        changed = 0
        for k in range(inside_trials):
            inner = resample_inside_window(noise, center, radius - 1, seed2_base + 1 + k)
            changed += solver.solve_picard(spec, sigma, inner, t, beta, n).values[center] != base
        rate = changed / inside_trials
    return ConeTestResult(bool(same), rate, inside_trials, radius)


def verify_witness(witness: LagClassWitness, sigma, dt, noise_seed=0):
    """Run :func:`cone_test` for the witness on a grid wide enough to make it non-vacuous."""
    spec = cone_grid(witness, dt)
    return cone_test(spec, sigma, witness.t, witness.beta, witness.n, noise_seed).outside_identical


# ---------------------------------------------------------------------------
# coupled ensembles


def _coupling_path(seed, spec, sigma, t, schedule, sites, cap):
    noise = sample_noise_grid(spec, seed)
    snaps, status, _ = solver.solve_full_path(spec, sigma, noise, [t], cap=cap)
    if status != 0:
        return None
    u = snaps[0].values[sites]
    by_beta = {}
    for beta, n in schedule:
        by_beta.setdefault(beta, set()).add(n)
    fields = {}
    for beta, levels in by_beta.items():
        for n, snap in solver.solve_picard_levels(spec, sigma, noise, t, beta, levels).items():
            fields[(beta, n)] = snap.values[sites]
    return np.stack([u - fields[(beta, n)] for beta, n in schedule])


@dataclass(frozen=True, eq=False)
class CouplingEnsemble:
    """``diffs[p, e, s] = u_t(x_s) - U^(beta_e, n_e)_t(x_s)`` for uncensored path ``p``."""

    spec: GridSpec
    sigma: object
    t: float
    schedule: tuple
    sites: np.ndarray
    diffs: np.ndarray = field(repr=False)
    paths: int
    censored: int

    @classmethod
    def run(cls, spec, sigma, t, schedule, paths, base_seed, sites=None, workers=1, cap=CENSOR_CAP):
        schedule = tuple((float(b), int(n)) for b, n in schedule)
        if not schedule:
            raise PreconditionError("schedule must not be empty")
        sites = equispaced_sites(spec.nx) if sites is None else np.asarray(sites)
        fn = partial(_coupling_path, spec=spec, sigma=sigma, t=t, schedule=schedule, sites=sites, cap=cap)
        ens: Ensemble = run_paths(fn, paths, base_seed, workers)
        return cls(spec, sigma, t, schedule, sites, ens.kept(), paths, ens.n_censored)

    def index(self, beta, n):
        return self.schedule.index((float(beta), int(n)))

    def site_moments(self, k, idx=None):
        """``mean_p |diff|^k`` per (entry, site)."""
        d = self.diffs if idx is None else self.diffs[idx]
        return np.mean(np.abs(d) ** k, axis=0)

    def sup_moments(self, k, idx=None):
        return self.site_moments(k, idx).max(axis=1)

    def exceed_counts(self, delta):
        """``#{p : |diff| > delta}`` per (entry, site)."""
        return np.count_nonzero(np.abs(self.diffs) > delta, axis=0)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CouplingEntry:
    beta: float
    n: int
    k: float
    moment: float
    moment_se: float
    exceed_prob: dict

    def to_dict(self):
        return {"beta": self.beta, "n": self.n, "k": self.k, "moment": self.moment, "moment_se": self.moment_se,
                "exceed_prob": {repr(float(d)): p for d, p in self.exceed_prob.items()}}


@dataclass(frozen=True)
class DecayFit:
    """Least-squares slope of ``log sup_x E|u - U|^k`` along one schedule axis."""

    axis: str
    fixed: float
    values: tuple
    log_moments: tuple
    slope: float
    ci: tuple

    @property
    def rate(self):
        return -self.slope

    def to_dict(self):
        return {"axis": self.axis, "fixed": self.fixed, "values": list(self.values),
                "log_moments": list(self.log_moments), "slope": self.slope, "ci": list(self.ci), "rate": self.rate}


@dataclass(frozen=True)
class CouplingReport:
    t: float
    sigma: dict
    entries: tuple
    fitted_rates: dict
    paths: int
    censored: int

    def to_dict(self):
        return {"t": self.t, "sigma": self.sigma, "entries": [e.to_dict() for e in self.entries],
                "fitted_rates": {k: (v.to_dict() if v is not None else None) for k, v in self.fitted_rates.items()},
                "paths": self.paths, "censored": self.censored}

    def to_json(self, path):
        return write_json(self.to_dict(), path)

    def to_csv(self, path):
        deltas = sorted({d for e in self.entries for d in e.exceed_prob})
        header = ["beta", "n", "k", "moment", "moment_se"] + [f"exceed_{d!r}" for d in deltas]
        rows = [[e.beta, e.n, e.k, e.moment, e.moment_se] + [e.exceed_prob.get(d) for d in deltas] for e in self.entries]
        return write_csv(path, header, rows)


def _slope(x, y):
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, np.asarray(y) - np.mean(y)) / np.dot(xc, xc))


def fit_decay(ens: CouplingEnsemble, axis, fixed, k=2, n_boot=1000, level=0.95, seed=0) -> DecayFit:
    """Slope in ``beta`` (``axis="beta"``, ``n = fixed``) or in ``n`` (``axis="n"``, ``beta = fixed``).

    The interval is a percentile bootstrap over paths.
    """
    if axis == "beta":
        sel = [(i, b) for i, (b, n) in enumerate(ens.schedule) if n == fixed]
    elif axis == "n":
        sel = [(i, n) for i, (b, n) in enumerate(ens.schedule) if b == fixed]
    else:
        raise ConfigurationError(f"axis must be 'beta' or 'n', got {axis!r}")
    sel = sorted(sel, key=lambda p: p[1])
    if len(sel) < 2:
        raise PreconditionError(f"need two schedule entries along {axis} at {fixed}")
    idx = [i for i, _ in sel]
    xs = [v for _, v in sel]
    sub = np.abs(ens.diffs[:, idx, :]) ** k
    logm = np.log(sub.mean(axis=0).max(axis=1))
    slope = _slope(xs, logm)
    rng = np.random.Generator(np.random.PCG64(seed))
    P = sub.shape[0]
    boots = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng.integers(0, P, P)
        boots[b] = _slope(xs, np.log(sub[pick].mean(axis=0).max(axis=1)))
    a = (1 - level) / 2
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))
    return DecayFit(axis, float(fixed), tuple(float(x) for x in xs), tuple(logm.tolist()), slope, ci)


def _default_fits(ens, k):
    fits = {"beta": None, "n": None}
    ns = {}
    bs = {}
    for b, n in ens.schedule:
        ns.setdefault(n, set()).add(b)
        bs.setdefault(b, set()).add(n)
    n_cand = [n for n, v in ns.items() if len(v) >= 2]
    b_cand = [b for b, v in bs.items() if len(v) >= 2 and math.isfinite(b)]
    if n_cand:
        fits["beta"] = fit_decay(ens, "beta", max(n_cand), k)
    if b_cand:
        fits["n"] = fit_decay(ens, "n", max(b_cand), k)
    return fits


def coupling_report(ens: CouplingEnsemble, k_list=(2,), deltas=(0.05, 0.1)) -> CouplingReport:
    if ens.diffs.shape[0] == 0:
        raise DegenerateEnsembleError("no uncensored paths")
    entries = []
    N = ens.diffs.shape[0]
    counts = {d: ens.exceed_counts(d) for d in deltas}
    for k in k_list:
        m = ens.site_moments(k)
        se = np.std(np.abs(ens.diffs) ** k, axis=0, ddof=1) / math.sqrt(N) if N > 1 else np.zeros_like(m)
        for e, (beta, n) in enumerate(ens.schedule):
            s = int(np.argmax(m[e]))
            probs = {float(d): float(counts[d][e].max() / N) for d in deltas}
            entries.append(CouplingEntry(beta, n, float(k), float(m[e, s]), float(se[e, s]), probs))
    return CouplingReport(ens.t, ens.sigma.describe(), tuple(entries), _default_fits(ens, k_list[0]), ens.paths, ens.censored)


def coupling_moments(spec, sigma, t, schedule, k_list, paths, base_seed, deltas=(0.05, 0.1), workers=1) -> CouplingReport:
    """Sup over the site subsample of ``E|u_t - U^(beta,n)_t|^k`` for each schedule entry."""
    if paths < 100:
        raise PreconditionError(f"coupling moments need at least 100 paths, got {paths}")
    ens = CouplingEnsemble.run(spec, sigma, t, schedule, paths, base_seed, workers=workers)
    return coupling_report(ens, k_list, deltas)


# ---------------------------------------------------------------------------
# correlation length


def wilson_upper(count, n, z=1.6448536269514722):
    """One-sided Wilson score upper bound (95% by default)."""
    p = count / n
    denom = 1 + z * z / n
    centre = p + z * z / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return min(1.0, (centre + half) / denom)


@dataclass(frozen=True)
class CorrelationLengthResult:
    """Outcome of the schedule search; ``lag`` and ``witness`` are ``None`` if not achieved."""

    epsilon: float
    delta: float
    lag: float | None
    witness: LagClassWitness | None
    table: tuple  # (beta, n, lag, max exceed prob, wilson upper)

    @property
    def achieved(self):
        return self.lag is not None

    def to_dict(self):
        return {"epsilon": self.epsilon, "delta": self.delta, "lag": self.lag,
                "witness": None if self.witness is None else self.witness.to_dict(),
                "table": [list(r) for r in self.table]}


def diagonal_schedule(values=DEFAULT_SCHEDULE):
    return tuple((float(v), int(v)) for v in values)


def correlation_length_from_ensemble(ens: CouplingEnsemble, epsilon, delta) -> CorrelationLengthResult:
    """Smallest witness lag whose worst-site exceedance bound is below ``epsilon``."""
    if not 0 < epsilon < 1:
        raise PreconditionError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not delta > 0:
        raise PreconditionError(f"delta must be positive, got {delta}")
    N = ens.diffs.shape[0]
    if epsilon < 5.0 / N:
        raise InsufficientPathsError(f"epsilon={epsilon} needs at least {math.ceil(5 / epsilon)} paths, have {N}")
    counts = ens.exceed_counts(delta)
    rows = []
    chosen = None
    order = sorted(range(len(ens.schedule)), key=lambda e: LagClassWitness.for_picard(ens.spec, *ens.schedule[e], ens.t).lag)
    for e in order:
        beta, n = ens.schedule[e]
        w = LagClassWitness.for_picard(ens.spec, beta, n, ens.t)
        c = int(counts[e].max())
        ub = wilson_upper(c, N)
        rows.append((beta, n, w.lag, c / N, ub))
        if chosen is None and ub < epsilon:
            chosen = w
    return CorrelationLengthResult(float(epsilon), float(delta), None if chosen is None else chosen.lag, chosen, tuple(rows))


def estimate_correlation_length(spec, sigma, t, epsilon, delta, paths, base_seed, schedule=None, workers=1, ensemble=None):
    """Search ``beta = n`` over the schedule for the smallest lag meeting ``(epsilon, delta)``.

    Pass a precomputed ``ensemble`` to evaluate several ``(epsilon, delta)``
    pairs on the same paths.
    """
    if not (epsilon > 0 and delta > 0):
        raise PreconditionError("epsilon and delta must be positive")
    if epsilon < 5.0 / paths:
        raise InsufficientPathsError(f"epsilon={epsilon} needs at least {math.ceil(5 / epsilon)} paths, have {paths}")
    if ensemble is None:
        ensemble = CouplingEnsemble.run(spec, sigma, t, schedule or diagonal_schedule(), paths, base_seed, workers=workers)
    return correlation_length_from_ensemble(ensemble, epsilon, delta)


# ---------------------------------------------------------------------------
# lag independence


def pearson(x, y):
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    den = math.sqrt(float(np.dot(x, x) * np.dot(y, y)))
    return float(np.dot(x, y) / den) if den > 0 else float("nan")


@dataclass(frozen=True)
class PicardBuilder:
    """Builds ``U^(beta, n)_t`` from a noise seed on a fixed grid."""

    spec: GridSpec
    sigma: object
    t: float
    beta: float
    n: int

    @property
    def witness(self):
        return LagClassWitness.for_picard(self.spec, self.beta, self.n, self.t)

    def from_noise(self, noise):
        return solver.solve_picard(self.spec, self.sigma, noise, self.t, self.beta, self.n).values

    def __call__(self, seed):
        return self.from_noise(sample_noise_grid(self.spec, seed))


@dataclass(frozen=True)
class LagCheckResult:
    max_abs_corr: float
    correlations: tuple
    cone_exact: bool
    paths: int


def _builder_sites(seed, builder, sites):
    return builder(seed)[np.asarray(sites)]


def lag_independence_check(builder: PicardBuilder, sites, paths, base_seed, workers=1) -> LagCheckResult:
    """Max |Pearson correlation| of ``U`` between distinct sites, plus the exact cone test.

    Every pair of sites must be either equal or at least one lag apart
    (periodic distance); the lag includes the kernel slack.
    """
    spec = builder.spec
    w = builder.witness
    sites = [int(s) % spec.nx for s in sites]
    if len(sites) < 2:
        raise PreconditionError("need at least two sites")
    for i, a in enumerate(sites):
        for b in sites[i + 1 :]:
            d = abs(a - b) % spec.nx
            d = min(d, spec.nx - d) * spec.dx
            if 0 < d < w.lag - 1e-9:
                raise PreconditionError(f"sites {a} and {b} are {d:.4g} apart, closer than the lag {w.lag:.4g}")
    ens = run_paths(partial(_builder_sites, builder=builder, sites=sites), paths, base_seed, workers)
    vals = ens.values
    corrs = []
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            corrs.append(pearson(vals[:, i], vals[:, j]))
    exact = True
    noise = sample_noise_grid(spec, base_seed)
    base = builder.from_noise(noise)
    radius = w.cone_cells()
    for s in sorted(set(sites)):
        other = resample_outside_window(noise, s, radius, base_seed + 7_919)
        exact &= bool(builder.from_noise(other)[s] == base[s])
    return LagCheckResult(float(np.max(np.abs(corrs))), tuple(corrs), exact, paths)
