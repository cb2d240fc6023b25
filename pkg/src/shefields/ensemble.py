"""Deterministic ensemble execution.

Path ``p`` always uses noise seed ``base_seed + p``.  Results come back in path
order whatever the worker count, so reductions over an ensemble are
bit-identical between serial and parallel runs.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import solver
from .errors import DegenerateEnsembleError, PreconditionError
from .noise import GridSpec, sample_noise_grid, sample_shifted_noise_grid

CENSOR_CAP = 1e12


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Per-path outputs stacked along axis 0.

    Censored paths keep their slot, filled with NaN, so ``values[p]`` always
    belongs to seed ``base_seed + p``.
    """

    base_seed: int
    values: np.ndarray = field(repr=False)
    censored: np.ndarray = field(repr=False)
    log_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def n_censored(self):
        return int(self.censored.sum())

    def kept(self):
        """Values of uncensored paths."""
        if self.n_censored == self.n_paths:
            raise DegenerateEnsembleError(f"all {self.n_paths} paths were censored")
        return self.values[~self.censored]


def _run_chunk(fn, seeds):
    return [fn(s) for s in seeds]


def run_paths(fn, n_paths, base_seed, workers=1, chunk=None):
    """Evaluate ``fn(seed)`` for ``seed = base_seed + p``, ``p < n_paths``.

    ``fn`` must be picklable when ``workers > 1`` and return either an array
    (all paths the same shape), ``None`` for a censored path, or a tuple
    ``(array_or_None, log_weight)``.
    """
    seeds = [base_seed + p for p in range(n_paths)]
    if workers <= 1 or n_paths < 2:
        raw = [fn(s) for s in seeds]
    else:
        chunk = chunk or max(1, math.ceil(n_paths / (4 * workers)))
        blocks = [seeds[i : i + chunk] for i in range(0, n_paths, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = [r for block in pool.map(partial(_run_chunk, fn), blocks) for r in block]
    weights = None
    if raw and isinstance(raw[0], tuple):
        weights = np.array([w for _, w in raw], dtype=float)
        raw = [v for v, _ in raw]
    censored = np.array([r is None for r in raw], dtype=bool)
    template = next((np.asarray(r, dtype=float) for r in raw if r is not None), None)
    if template is None:
        raise DegenerateEnsembleError(f"all {n_paths} paths were censored")
    values = np.full((n_paths,) + template.shape, np.nan)
    for p, r in enumerate(raw):
        if r is not None:
            values[p] = r
    return Ensemble(base_seed, values, censored, weights)


# ---------------------------------------------------------------------------
# standard path functions (top level so they pickle)


def _full_snapshots(spec, sigma, noise, times, cap):
    snaps, status, _ = solver.solve_full_path(spec, sigma, noise, times, cap=cap)
    if status != 0:
        return None
    return np.stack([s.values for s in snaps])


def full_field_path(seed, spec: GridSpec, sigma, times, sites=None, cap=CENSOR_CAP):
    """``u_t(x)`` at each of ``times`` (rows) and ``sites`` (columns; all if None)."""
    noise = sample_noise_grid(spec, seed)
    out = _full_snapshots(spec, sigma, noise, times, cap)
    if out is None or sites is None:
        return out
    return out[:, np.asarray(sites)]


def shifted_site_path(seed, spec: GridSpec, sigma, t_end, shift, site=0, cap=CENSOR_CAP):
    """``(u_{t_end}(site), log_weight)`` under noise shifted by ``shift``."""
    noise, log_w = sample_shifted_noise_grid(spec, seed, shift)
    out = _full_snapshots(spec, sigma, noise, [t_end], cap)
    return (None if out is None else out[0, site]), log_w


def feedback_site_path(seed, spec: GridSpec, sigma, t_end, kappa, powers, site=0, cap=CENSOR_CAP):
    """``(u_{t_end}(site), log_weight)`` under the state-dependent drift."""
    eta = sample_noise_grid(spec, seed).increments
    u, log_w, status = solver.solve_feedback_tilted(spec, sigma, eta, t_end, kappa, site, powers, cap)
    return (u[site] if status == 0 else None), log_w


def full_ensemble(spec, sigma, times, n_paths, base_seed, sites=None, workers=1, cap=CENSOR_CAP):
    fn = partial(full_field_path, spec=spec, sigma=sigma, times=list(times), sites=sites, cap=cap)
    return run_paths(fn, n_paths, base_seed, workers)


DRIFTS = ("kernel", "feedback")


def tilted_site_ensemble(spec, sigma, t_end, kappa, n_paths, base_seed, site=0, workers=1, cap=CENSOR_CAP,
                         drift="kernel"):
    """Values at ``site`` under a drift of strength ``kappa``, with log-weights.

    ``drift="kernel"`` is the fixed heat-kernel shift; ``"feedback"`` is the
    state-dependent shift of :func:`solver.solve_feedback_tilted`, which keeps
    the weights usable for multiplicative noise far into the small-ball tail.
    With ``kappa = 0`` both reproduce plain sampling.
    """
    if drift == "kernel":
        shift = solver.heat_kernel_drift(spec, t_end, kappa, site)
        fn = partial(shifted_site_path, spec=spec, sigma=sigma, t_end=t_end, shift=shift, site=site, cap=cap)
    elif drift == "feedback":
        powers = solver.feedback_drift_powers(spec, t_end, site)
        fn = partial(feedback_site_path, spec=spec, sigma=sigma, t_end=t_end, kappa=kappa, powers=powers,
                     site=site, cap=cap)
    else:
        raise PreconditionError(f"drift must be one of {DRIFTS}, got {drift!r}")
    return run_paths(fn, n_paths, base_seed, workers)


def calibrate_tilt(spec, sigma, t_end, target, pilot_paths=200, base_seed=0, kappa_max=64.0, iters=12, site=0,
                   drift="kernel"):
    """Drift strength whose pilot median of ``u_{t_end}(site)`` is closest to ``target``.

    Bisection on ``kappa`` with the same pilot seeds at every trial, so the
    result is deterministic.  ``target >= 1`` needs no drift and returns 0.
    """
    if not target > 0:
        raise PreconditionError("target must be positive")
    if target >= 1:
        return 0.0

    def median(kappa):
        ens = tilted_site_ensemble(spec, sigma, t_end, kappa, pilot_paths, base_seed, site, drift=drift)
        return float(np.median(ens.values[~ens.censored]))

    lo, hi = 0.0, kappa_max
    if median(hi) > target:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if median(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
