"""Solvers for the full, localized and Picard-iterated stochastic heat equation.

All three fields are driven by one :class:`~shefields.noise.NoiseGrid` and are
built from the same discrete heat semigroup ``K`` (a sampled, normalized
Gaussian stencil of variance ``dt``):

* the full solution ``u`` is stepped, ``u_{m+1} = K (u_m + sigma(u_m) xi_m / dx)``;
* the Picard iterates ``U^(beta, l+1)`` evaluate the discrete mild form
  ``1 + sum_{m' < m} sum_{|z| dx <= w} K^{m-m'}(z) sigma(U^(beta,l)_{m'}) xi_{m'} / dx``
  with ``w = sqrt(beta * t_end)``, so the value at ``x`` reads noise only
  within ``l * w`` of ``x``;
* the localized solution ``U^(beta)`` is the fixed point of that map.

With an unrestricted window the mild form and the stepping scheme are the same
recursion, so Picard iterates converge to ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
import scipy.fft

from . import _kernels
from .errors import (
    BlowUpError,
    ConfigurationError,
    ConvergenceError,
    PreconditionError,
    ResourceError,
)
from .noise import GridSpec, NoiseGrid

KERNEL_TAIL_MASS = 1e-12
DEFAULT_MEMORY_BUDGET = 2 * 2**30


# ---------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class PAM:
    """Case 1: ``sigma(z) = q z``."""

    q: float = 1.0

    def __post_init__(self):
        if not self.q > 0:
            raise ConfigurationError(f"PAM requires q > 0, got {self.q}")

    case = 1
    lip_const = property(lambda self: self.q)
    value_at_zero = 0.0

    def __call__(self, z):
        return self.q * np.asarray(z, dtype=float)

    def _compiled(self):
        return _kernels.sigma_pam, float(self.q), 0.0

    def describe(self):
        return {"kind": "pam", "q": self.q}


_SHAPES = {
    "constant": _kernels.sigma_constant,
    "tanh": _kernels.sigma_tanh,
    "sine": _kernels.sigma_sine,
}


@dataclass(frozen=True)
class BoundedPositive:
    """Case 2: ``lo <= sigma <= hi`` with ``lo > 0``.

    ``shape`` picks the interpolation between ``lo`` and ``hi``:
    ``"constant"`` (requires ``lo == hi``), ``"tanh"``
    (``lo + (hi-lo)(1+tanh(z-1))/2``) or ``"sine"`` (``lo + (hi-lo)(1+sin z)/2``).
    """

    lo: float
    hi: float
    shape: str = "tanh"

    def __post_init__(self):
        if not self.lo > 0:
            raise ConfigurationError(f"bounded sigma needs lo > 0, got {self.lo}")
        if self.hi < self.lo:
            raise ConfigurationError(f"bounded sigma needs hi >= lo, got {self.hi} < {self.lo}")
        if self.shape not in _SHAPES:
            raise ConfigurationError(f"unknown shape {self.shape!r}; choose from {sorted(_SHAPES)}")
        if self.shape == "constant" and self.hi != self.lo:
            raise ConfigurationError("constant shape requires lo == hi")

    case = 2

    @property
    def lip_const(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def value_at_zero(self):
        return float(self(0.0))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        span = self.hi - self.lo
        if self.shape == "constant":
            return np.full_like(z, self.lo)
        if self.shape == "tanh":
            return self.lo + span * 0.5 * (1.0 + np.tanh(z - 1.0))
        return self.lo + span * 0.5 * (1.0 + np.sin(z))

    def _compiled(self):
        return _SHAPES[self.shape], float(self.lo), float(self.hi)

    def describe(self):
        return {"kind": "bounded", "lo": self.lo, "hi": self.hi, "shape": self.shape}


def constant(c: float) -> BoundedPositive:
    """``sigma(z) = c``; the linear, Gaussian special case of Case 2."""
    return BoundedPositive(c, c, "constant")


@dataclass(frozen=True, eq=False)
class Custom:
    """User-supplied Lipschitz nonlinearity.

    ``fn`` must accept a scalar float.  If numba can compile it, the solvers
    run at full speed; otherwise they fall back to a numpy loop.
    """

    fn: Callable[[float], float]
    lip_const: float
    value_at_zero: float
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    case = None

    def __post_init__(self):
        if not self.lip_const > 0:
            raise ConfigurationError(f"lip_const must be positive, got {self.lip_const}")
        if not math.isclose(float(self.fn(0.0)), self.value_at_zero, rel_tol=1e-12, abs_tol=1e-12):
            raise ConfigurationError(
                f"declared value_at_zero={self.value_at_zero} but fn(0)={self.fn(0.0)}"
            )

    def __call__(self, z):
        return np.vectorize(self.fn, otypes=[float])(np.asarray(z, dtype=float))

    def check_lipschitz(self, n_pairs=1000, scale=10.0, seed=0):
        """Spot-check ``|f(z)-f(w)| <= lip |z-w|`` on random pairs; returns the worst ratio."""
        rng = np.random.Generator(np.random.PCG64(seed))
        z = rng.uniform(-scale, scale, n_pairs)
        w = rng.uniform(-scale, scale, n_pairs)
        keep = z != w
        ratio = np.abs(self(z[keep]) - self(w[keep])) / np.abs(z[keep] - w[keep])
        worst = float(ratio.max(initial=0.0))
        if worst > self.lip_const * (1 + 1e-9):
            raise ConfigurationError(
                f"{self.name}: observed slope {worst:.4g} exceeds lip_const {self.lip_const}"
            )
        return worst

    def _compiled(self):
        if "sig" not in self._cache:
            try:
                jfn = numba.njit(self.fn)
                jfn(1.0)

                @numba.njit
                def sig(z, a, b):
                    return jfn(z)

                sig(1.0, 0.0, 0.0)
                self._cache["sig"] = sig
            except Exception:  # numba cannot type the callable
                self._cache["sig"] = None
        sig = self._cache["sig"]
        return (sig, 0.0, 0.0) if sig is not None else None

    def describe(self):
        return {"kind": "custom", "name": self.name, "lip_const": self.lip_const}


SigmaSpec = PAM | BoundedPositive | Custom


# ---------------------------------------------------------------------------
# heat kernel


def heat_kernel(t, x):
    """``p_t(x) = exp(-x^2 / 2t) / sqrt(2 pi t)``, the kernel of ``(1/2) d^2/dx^2``."""
    if not np.all(np.asarray(t) > 0):
        raise PreconditionError(f"heat kernel needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    out = np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class KernelRow:
    """One-step stencil ``weights[r + i] ~ p_dt(i dx) dx``, ``i = -r..r``.

    The sampled Gaussian is truncated where the discarded mass drops below
    ``1e-12`` and then renormalized to unit mass.
    """

    dt_step: float
    dx: float
    weights: np.ndarray = field(repr=False)
    r_cells: int

    @classmethod
    def build(cls, dt, dx, tail_mass=KERNEL_TAIL_MASS):
        s = math.sqrt(dt) / dx
        big = int(math.ceil(12.0 * s)) + 2
        idx = np.arange(-big, big + 1)
        raw = heat_kernel(dt, idx * dx) * dx
        raw = raw / math.fsum(raw)
        half = raw[big:]
        # mass beyond radius r, summed from the far end to avoid cancellation
        tails = 2.0 * np.cumsum(half[::-1])[::-1]
        beyond = np.append(tails[1:], 0.0)
        r = int(np.argmax(beyond < tail_mass))
        w = raw[big - r : big + r + 1].copy()
        w /= math.fsum(w)
        w = 0.5 * (w + w[::-1])
        w.setflags(write=False)
        return cls(dt, dx, w, r)

    @classmethod
    def for_grid(cls, spec: GridSpec):
        return cls.build(spec.dt, spec.dx)

    def periodic(self, nx, window_cells=None):
        """Stencil folded onto an ``nx``-periodic grid, optionally windowed.

        Entries with ``|i| > window_cells`` are zeroed before folding.
        """
        r = self.r_cells
        offs = np.arange(-r, r + 1)
        w = self.weights.copy()
        if window_cells is not None:
            w[np.abs(offs) > window_cells] = 0.0
        if 2 * r + 1 <= nx:
            return w
        half = (nx - 1) // 2
        folded_offs = np.arange(-half, nx - half)
        out = np.zeros(nx)
        for o, wi in zip(offs, w):
            out[(o + half) % nx] += wi
        # pad symmetric so the kernel loop sees offsets -R..R
        R = max(half, nx - 1 - half)
        full = np.zeros(2 * R + 1)
        full[folded_offs + R] = out
        return full


# ---------------------------------------------------------------------------
# snapshots


@dataclass(frozen=True)
class Provenance:
    kind: str  # "full", "localized" or "picard"
    beta: Optional[float] = None
    n: Optional[int] = None

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def localized(cls, beta):
        return cls("localized", float(beta))

    @classmethod
    def picard(cls, beta, n):
        return cls("picard", float(beta), int(n))

    def label(self):
        if self.kind == "full":
            return "Full"
        if self.kind == "localized":
            return f"Localized(beta={self.beta!r})"
        return f"Picard(beta={self.beta!r}, n={self.n})"


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Spatial profile of a field at one time on the periodic grid."""

    grid: GridSpec
    time: float
    values: np.ndarray = field(repr=False)
    provenance: Provenance = field(default_factory=Provenance.full)
    noise_seed: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.nx,):
            raise ConfigurationError(f"snapshot has {v.shape} values for nx={self.grid.nx}")
        if not np.all(np.isfinite(v)):
            raise BlowUpError(-1, "snapshot contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self):
        return self.grid.x

    @property
    def dx(self):
        return self.grid.dx

    def to_csv(self, path):
        from .io import write_snapshot_csv

        write_snapshot_csv(self, path)


# ---------------------------------------------------------------------------
# stepping


def _compiled(sigma):
    get = getattr(sigma, "_compiled", None)
    return get() if get is not None else None


def _numpy_steps(sigma, u, xi, inv_dx, w_det, w_sto, split, cap, record_steps, snaps):
    """Reference loop for nonlinearities numba cannot compile."""
    r = (w_det.size - 1) // 2
    offs = np.arange(-r, r + 1)
    rec = 0
    while rec < record_steps.size and record_steps[rec] == 0:
        snaps[rec] = u
        rec += 1
    for m in range(xi.shape[0]):
        f = sigma(u) * xi[m] * inv_dx
        new = np.zeros_like(u)
        if split:
            for d, wd, ws in zip(offs, w_det, w_sto):
                new += wd * np.roll(u, d) + ws * np.roll(f, d)
        else:
            tmp = u + f
            for d, wd in zip(offs, w_det):
                new += wd * np.roll(tmp, d)
        u[:] = new
        while rec < record_steps.size and record_steps[rec] == m + 1:
            snaps[rec] = u
            rec += 1
        if not np.all(np.isfinite(u)):
            return _kernels.NONFINITE, m + 1
        if np.any(np.abs(u) > cap):
            return _kernels.CENSORED, m + 1
    return _kernels.OK, xi.shape[0]


def integrate(spec, sigma, xi, u0, kernel=None, window_cells=None, record_steps=(), cap=math.inf):
    """Run the stepping scheme over the rows of ``xi`` starting from ``u0``.

    Returns ``(u, snaps, status, step)`` where ``status`` is one of
    ``_kernels.OK/CENSORED/NONFINITE``.  ``u0`` is not modified.
    """
    kernel = kernel or KernelRow.for_grid(spec)
    nx = spec.nx
    w_det = np.ascontiguousarray(kernel.periodic(nx))
    split = window_cells is not None and window_cells < kernel.r_cells
    w_sto = np.ascontiguousarray(kernel.periodic(nx, window_cells)) if split else w_det
    u = np.array(u0, dtype=np.float64, copy=True)
    rec = np.asarray(sorted(record_steps), dtype=np.int64)
    snaps = np.empty((rec.size, nx))
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    inv_dx = 1.0 / spec.dx
    comp = _compiled(sigma)
    if comp is not None:
        sig, a, b = comp
        status, step = _kernels.run_steps(
            sig, a, b, u, xi, inv_dx, w_det, w_sto, split, float(cap), rec, snaps
        )
    else:
        status, step = _numpy_steps(sigma, u, xi, inv_dx, w_det, w_sto, split, cap, rec, snaps)
    return u, snaps, int(status), int(step)


def step_mild(field: FieldSnapshot, noise_row, sigma, kernel: KernelRow, window_cells=None) -> FieldSnapshot:
    """One exponential-Euler step.

    ``u'(x_i) = sum_j k(i-j) u(x_j) + sum_j k(i-j) sigma(u(x_j)) dW_j / dx``,
    with the stochastic sum limited to ``|i-j| <= window_cells`` when given.
    """
    spec = field.grid
    row = np.asarray(noise_row, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != spec.nx:
        raise PreconditionError(f"noise row has {row.shape[1]} entries, grid has {spec.nx}")
    if not np.all(np.isfinite(field.values)):
        raise PreconditionError("input field is not finite")
    u, _, status, step = integrate(spec, sigma, row, field.values, kernel, window_cells)
    if status == _kernels.NONFINITE:
        raise BlowUpError(step)
    return FieldSnapshot(spec, field.time + kernel.dt_step, u, field.provenance, field.noise_seed)


def _check_noise(spec, noise):
    if noise.spec != spec:
        raise ConfigurationError("noise grid was sampled for a different GridSpec")


def solve_full(spec, sigma, noise: NoiseGrid, t_end, u0=None, cap=math.inf):
    """Full solution from ``u_0 = 1`` (or ``u0``) at ``t_end``.

    Raises :class:`BlowUpError` on non-finite output.  Values above ``cap``
    also raise, with the step index, so ensemble runners can censor the path.
    """
    snaps, status, step = solve_full_path(spec, sigma, noise, [t_end], u0=u0, cap=cap)
    if status != _kernels.OK:
        raise BlowUpError(step, f"field exceeded cap {cap:g} at step {step}" if status == _kernels.CENSORED else None)
    return snaps[0]


def solve_full_path(spec, sigma, noise: NoiseGrid, times, u0=None, cap=math.inf):
    """Snapshots of the full solution at each of ``times``.

    Returns ``(snapshots, status, step)``; on a non-OK status the snapshot list
    holds only the times reached before the failure.
    """
    _check_noise(spec, noise)
    steps = [spec.steps_to(t) for t in times]
    last = max(steps)
    u0 = np.ones(spec.nx) if u0 is None else np.asarray(u0, dtype=float)
    _, snaps, status, step = integrate(
        spec, sigma, noise.increments[:last], u0, record_steps=steps, cap=cap
    )
    order = np.argsort(steps, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(steps))
    out = []
    for t, n, k in zip(times, steps, rank):
        if status != _kernels.OK and n >= step:
            continue
        out.append(FieldSnapshot(spec, n * spec.dt, snaps[k], Provenance.full(), noise.seed))
    return out, status, step


# ---------------------------------------------------------------------------
# windowed mild form


def kernel_powers(spec, kernel, powers, offsets, chunk=256):
    """``out[j, k] = K^{powers[j]}(offsets[k])`` for the periodic one-step stencil ``K``.

    Powers are taken exactly in Fourier space and transformed back in chunks.
    """
    nx = spec.nx
    stencil = np.zeros(nx)
    w = kernel.periodic(nx)
    R = (w.size - 1) // 2
    for o, wi in zip(range(-R, R + 1), w):
        stencil[o % nx] += wi
    kh = scipy.fft.rfft(stencil).real
    powers = np.asarray(powers)
    cols = np.asarray(offsets) % nx
    out = np.empty((powers.size, cols.size))
    for start in range(0, powers.size, chunk):
        ks = powers[start : start + chunk]
        rows = scipy.fft.irfft(kh[None, :] ** ks[:, None], n=nx, axis=1)
        out[start : start + ks.size] = rows[:, cols]
    return out


def heat_kernel_drift(spec, t_end, kappa, center_index=0):
    """Noise shift ``h[j, i] = -kappa dt K^{n-j}(i - center)`` aimed at one site.

    ``n`` is the number of steps to ``t_end``; rows past ``n`` are zero.  In
    the linearized equation this lowers the field at ``center_index`` by
    about ``kappa`` times the stochastic-convolution variance, and it is the
    cheapest such shift in Cameron-Martin norm.
    """
    n = spec.steps_to(t_end)
    kernel = KernelRow.for_grid(spec)
    offs = np.arange(spec.nx) - center_index
    h = np.zeros((spec.nt, spec.nx))
    h[:n] = -kappa * spec.dt * kernel_powers(spec, kernel, n - np.arange(n), offs)
    return h


def feedback_drift_powers(spec, t_end, center_index=0):
    """``K^{n-j}(i - center)`` rows used by :func:`solve_feedback_tilted`."""
    n = spec.steps_to(t_end)
    kernel = KernelRow.for_grid(spec)
    return kernel_powers(spec, kernel, n - np.arange(n), np.arange(spec.nx) - center_index)


def solve_feedback_tilted(spec, sigma, eta, t_end, kappa, center_index=0, powers=None, cap=math.inf):
    """Full solution driven by ``xi_j = eta_j + h_j(u_j)`` with a state-dependent shift.

    ``h_j(i) = -kappa dt K^{n-j}(i - c) sigma(u_j(i)) / sum_i K^{n-j}(i - c) u_j(i)``
    is the linearized sensitivity of ``log u_n(c)`` to the noise at step
    ``j``.  It lowers ``log u`` at a steady rate even after ``u`` has become
    small, which a fixed heat-kernel shift cannot do for multiplicative
    noise.  For bounded ``sigma`` the shift grows as ``u`` falls and the
    weights degrade, so the fixed shift is the better choice there.  ``eta``
    holds the unshifted increments.  Because ``h_j`` only
    depends on the past, the likelihood ratio of the unshifted law is
    ``exp(-sum_j <h_j, eta_j>/v - |h_j|^2/(2v))`` with ``v = dt dx``.

    Returns ``(u, log_weight, status)``.
    """
    n = spec.steps_to(t_end)
    P = feedback_drift_powers(spec, t_end, center_index) if powers is None else powers
    kernel = KernelRow.for_grid(spec)
    w = np.ascontiguousarray(kernel.periodic(spec.nx))
    v = spec.dt * spec.dx
    inv_dx = 1.0 / spec.dx
    comp = _compiled(sigma)
    rec = np.zeros(0, dtype=np.int64)
    snaps = np.empty((0, spec.nx))
    u = np.ones(spec.nx)
    row = np.empty((1, spec.nx))
    log_w = 0.0
    for j in range(n):
        den = float(P[j] @ u)
        h = -kappa * spec.dt * P[j] * sigma(u) / den if den > 0 else np.zeros(spec.nx)
        log_w -= float(h @ eta[j]) / v + 0.5 * float(h @ h) / v
        row[0] = eta[j] + h
        if comp is not None:
            status, _ = _kernels.run_steps(*comp, u, row, inv_dx, w, w, False, float(cap), rec, snaps)
        else:
            status, _ = _numpy_steps(sigma, u, row, inv_dx, w, w, False, cap, rec, snaps)
        if status != _kernels.OK:
            return u, log_w, int(status)
    return u, log_w, _kernels.OK




def window_cells_for(spec, beta, t_end):
    """Largest ``c`` with ``c * dx <= sqrt(beta * t_end)``."""
    if not beta > 0:
        raise PreconditionError(f"beta must be positive, got {beta}")
    if math.isinf(beta):
        return spec.nx
    return int(math.floor(math.sqrt(beta * t_end) / spec.dx + 1e-9))


def covers_grid(spec, window_cells):
    return window_cells >= spec.nx // 2


class MildConvolution:
    """Windowed discrete stochastic convolution on a fixed grid.

    Evaluates, for every site ``i`` and step ``m = 0..n_steps``,
    ``sum_{m' < m} sum_{z in window} K^{m-m'}(z) F[i - z, m']``.  The time
    convolution goes through an FFT per site; the spatial sum is a direct loop
    over the window, so row ``i`` never reads data outside it.
    """

    def __init__(self, spec: GridSpec, n_steps: int, window_cells: int, kernel: KernelRow = None):
        self.spec = spec
        self.n_steps = n_steps
        self.kernel = kernel or KernelRow.for_grid(spec)
        nx = spec.nx
        lo, hi = -((nx - 1) // 2), nx // 2
        w = min(window_cells, hi)
        zpos = np.arange(0, w + 1)
        paired = (zpos > 0) & (-zpos >= lo) & (zpos != nx - zpos)
        self.window_cells = w
        self.zpos = zpos.astype(np.int64)
        self.paired = paired
        self.fft_len = scipy.fft.next_fast_len(2 * n_steps, real=True)
        table = self._power_table(zpos)
        self.gh = np.ascontiguousarray(scipy.fft.rfft(table, n=self.fft_len, axis=1))

    def _power_table(self, zpos):
        """``table[k, m] = K^m(z_k)`` for ``m = 0..n_steps`` (``m = 0`` column zero)."""
        table = kernel_powers(self.spec, self.kernel, np.arange(1, self.n_steps + 1), zpos)
        return np.concatenate([np.zeros((zpos.size, 1)), table.T], axis=1)

    def bytes_per_iterate(self):
        nx, nt = self.spec.nx, self.n_steps
        nf = self.fft_len // 2 + 1
        return 8 * nx * (nt + 1) * 3 + 16 * nx * nf * 2 + 8 * nx * self.fft_len

    def __call__(self, forcing):
        """``forcing`` has shape ``(nx, n_steps)``; returns ``(nx, n_steps + 1)``."""
        fh = scipy.fft.rfft(forcing, n=self.fft_len, axis=1)
        acc = np.empty_like(fh)
        _kernels.window_accumulate(fh, self.gh, self.zpos, self.paired, acc)
        out = scipy.fft.irfft(acc, n=self.fft_len, axis=1)[:, : self.n_steps + 1]
        out[:, 0] = 0.0
        return out


def _forcing(sigma, values, xi_t, inv_dx, out):
    comp = _compiled(sigma)
    if comp is not None:
        sig, a, b = comp
        _kernels.apply_sigma(sig, a, b, values, xi_t, inv_dx, out)
    else:
        np.multiply(sigma(values[:, : xi_t.shape[1]]), xi_t * inv_dx, out=out)
    return out


def picard_iterates(spec, sigma, noise, t_end, beta, n_max, memory_budget=DEFAULT_MEMORY_BUDGET, conv=None):
    """Yield ``(l, trajectory)`` for ``l = 1..n_max``; trajectories are ``(nx, n_steps+1)``.

    Only the previous iterate is kept.  When the forcing of two consecutive
    iterates is bitwise equal (constant ``sigma``) the next iterate is the
    same array and no convolution is done.
    """
    _check_noise(spec, noise)
    n_steps = spec.steps_to(t_end)
    if conv is None:
        conv = MildConvolution(spec, n_steps, window_cells_for(spec, beta, t_end))
    need = conv.bytes_per_iterate()
    if need > memory_budget:
        raise ResourceError(need, memory_budget)
    xi_t = np.ascontiguousarray(noise.increments[:n_steps].T)
    inv_dx = 1.0 / spec.dx
    traj = np.ones((spec.nx, n_steps + 1))
    forcing = np.empty((spec.nx, n_steps))
    prev_forcing = None
    for level in range(1, n_max + 1):
        _forcing(sigma, traj, xi_t, inv_dx, forcing)
        if prev_forcing is None or not np.array_equal(forcing, prev_forcing):
            traj = 1.0 + conv(forcing)
            if not np.all(np.isfinite(traj[:, -1])):
                raise BlowUpError(n_steps, f"Picard iterate {level} is not finite")
            prev_forcing, forcing = forcing, (prev_forcing if prev_forcing is not None else np.empty_like(forcing))
        yield level, traj


def solve_picard_levels(spec, sigma, noise, t_end, beta, levels, **kw):
    """Terminal snapshots ``U^(beta, n)_{t_end}`` for each ``n`` in ``levels``, one pass."""
    levels = sorted(set(int(n) for n in levels))
    if levels and levels[0] < 0:
        raise PreconditionError("Picard level must be >= 0")
    n_steps = spec.steps_to(t_end)
    out = {}
    for n in levels:
        if n == 0:
            out[0] = np.ones(spec.nx)
    top = levels[-1] if levels else 0
    if top > 0:
        for level, traj in picard_iterates(spec, sigma, noise, t_end, beta, top, **kw):
            if level in levels:
                out[level] = traj[:, n_steps].copy()
    t = n_steps * spec.dt
    return {
        n: FieldSnapshot(spec, t, v, Provenance.picard(beta, n), noise.seed) for n, v in out.items()
    }


def solve_picard(spec, sigma, noise, t_end, beta, n, **kw) -> FieldSnapshot:
    """``U^(beta, n)`` at ``t_end``; ``n = 0`` is the constant field 1."""
    return solve_picard_levels(spec, sigma, noise, t_end, beta, [n], **kw)[int(n)]


def solve_localized(spec, sigma, noise, t_end, beta, tol=1e-12, max_iter=200, **kw) -> FieldSnapshot:
    """``U^(beta)`` at ``t_end``: fixed point of the windowed mild equation.

    A window that covers the whole periodic grid leaves the equation
    unrestricted, and the result is then exactly :func:`solve_full`.
    """
    wc = window_cells_for(spec, beta, t_end)
    if covers_grid(spec, wc):
        snap = solve_full(spec, sigma, noise, t_end)
        return FieldSnapshot(spec, snap.time, snap.values, Provenance.localized(beta), noise.seed)
    n_steps = spec.steps_to(t_end)
    prev = None
    for level, traj in picard_iterates(spec, sigma, noise, t_end, beta, max_iter, **kw):
        if prev is not None:
            change = np.max(np.abs(traj - prev))
            if change <= tol * max(1.0, float(np.max(np.abs(traj)))):
                return FieldSnapshot(
                    spec, n_steps * spec.dt, traj[:, n_steps], Provenance.localized(beta), noise.seed
                )
        prev = traj.copy()
    raise ConvergenceError(f"localized solution did not converge in {max_iter} Picard steps")


# ---------------------------------------------------------------------------
# comparison principle


def comparison_tolerance(dx):
    """Allowance for order violations of the discrete scheme: ``1e-8 + 3 sqrt(dx)``."""
    return 1e-8 + 3.0 * math.sqrt(dx)


def indicator_initial(spec, lo=-1.0, hi=1.0):
    """``1_{(lo, hi)}`` on the periodic grid (coordinates taken mod ``L``)."""
    x = spec.x
    xs = np.where(x > spec.length / 2, x - spec.length, x)
    return ((xs > lo) & (xs < hi)).astype(float)


def comparison_check(spec, sigma, noise, t_end, u0_low) -> float:
    """Fraction of sites where the solution from ``u0_low`` exceeds the one from 1.

    Both solutions share ``noise``.  A site counts as a violation when
    ``v > u + comparison_tolerance(dx)``.
    """
    if abs(float(sigma.value_at_zero)) != 0.0:
        raise PreconditionError("comparison principle needs sigma(0) = 0")
    low = np.asarray(u0_low, dtype=float)
    if low.shape != (spec.nx,) or np.any(low < 0) or np.any(low > 1):
        raise PreconditionError("u0_low must be an nx-array with values in [0, 1]")
    u = solve_full(spec, sigma, noise, t_end)
    v = solve_full(spec, sigma, noise, t_end, u0=low)
    tol = comparison_tolerance(spec.dx)
    return float(np.mean(v.values > u.values + tol))
