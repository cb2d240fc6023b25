"""Deterministic reference values used to validate the Monte Carlo solvers."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

from .errors import PreconditionError


def gaussian_variance_quadrature(t, c=1.0):
    """``c^2 int_0^t int_R p_{t-s}(y)^2 dy ds`` by nested adaptive quadrature.

    For constant ``sigma = c`` this is ``Var u_t(x)``.  The closed form is
    ``c^2 sqrt(t/pi)``; this routine does not use it.
    """
    if t <= 0:
        raise PreconditionError("t must be positive")

    def inner(s):
        if s <= 0:
            return 0.0
        f = lambda y: math.exp(-y * y / s) / (2.0 * math.pi * s)
        width = 40.0 * math.sqrt(s)
        return 2.0 * integrate.quad(f, 0.0, width, epsabs=0, epsrel=1e-12, limit=200)[0]

    # substitute s = r^2 to remove the s^{-1/2} endpoint singularity
    val = integrate.quad(lambda r: 2.0 * r * inner(r * r), 0.0, math.sqrt(t), epsabs=0, epsrel=1e-12, limit=200)[0]
    return c * c * val


def gaussian_variance(t, c=1.0):
    """Closed form ``c^2 sqrt(t/pi)``."""
    return c * c * math.sqrt(t / math.pi)


def renewal_second_moment(t_grid, q=1.0, n_steps=20000):
    """Solve ``f(t) = 1 + q^2 int_0^t f(s) / (2 sqrt(pi (t-s))) ds`` on ``[0, max t]``.

    Product-trapezoid rule: ``f`` is taken piecewise linear on a uniform grid
    and each panel is integrated against the singular kernel exactly.  The
    result is interpolated linearly onto ``t_grid``.  For the default step
    count the error is below 1e-6 for ``t <= 1``.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t_grid < 0):
        raise PreconditionError("times must be non-negative")
    T = float(t_grid.max())
    if T == 0:
        return np.ones_like(t_grid)
    h = T / n_steps
    c = q * q / (2.0 * math.sqrt(math.pi))
    f = np.empty(n_steps + 1)
    f[0] = 1.0
    # r-grid: r_k = k h; panel between r_k and r_{k+1}
    k = np.arange(n_steps + 1, dtype=float) * h
    sq = np.sqrt(k)
    A = 2.0 * (sq[1:] - sq[:-1])  # int r^{-1/2}
    B = (2.0 / 3.0) * (k[1:] * sq[1:] - k[:-1] * sq[:-1])  # int r^{1/2}
    # f is linear in r on each panel; split the panel integral between its
    # two nodes, s_{n-k} (r = r_k) and s_{n-k-1} (r = r_{k+1})
    far = (B - k[:-1] * A) / h  # weight of node s_{n-k-1}
    near = A - far  # weight of node s_{n-k}
    for n in range(1, n_steps + 1):
        # panels k = 0..n-1; node s_{n-k} gets near[k], node s_{n-k-1} gets far[k]
        acc = np.dot(near[1:n], f[n - 1 : 0 : -1]) + np.dot(far[:n], f[n - 1 :: -1])
        f[n] = (1.0 + c * acc) / (1.0 - c * near[0])
    return np.interp(t_grid, np.linspace(0.0, T, n_steps + 1), f)


def pam_second_moment_closed_form(t, q=1.0):
    """``2 exp(q^4 t / 4) Phi(q^2 sqrt(t/2))``, the Laplace-inverted renewal solution."""
    t = np.asarray(t, dtype=float)
    a = 0.5 * q * q
    return np.exp(a * a * t) * special.erfc(-a * np.sqrt(t))


def discrete_linear_variance(spec, kernel_powers_sq_sum):
    """Variance of the stepping scheme for ``sigma = 1`` at a fixed site.

    ``kernel_powers_sq_sum[m]`` is ``sum_i K^{m+1}(i)^2``; the scheme's
    variance is ``dt/dx`` times their total.
    """
    return spec.dt / spec.dx * float(np.sum(kernel_powers_sq_sum))
