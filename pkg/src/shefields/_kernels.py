"""Compiled inner loops.

All loops run without ``fastmath`` so results are bit-reproducible and the
summation order is fixed; the dependence-cone tests rely on that.
"""

import math

import numba
import numpy as np

OK, CENSORED, NONFINITE = 0, 1, 2


@numba.njit(cache=True)
def sigma_pam(z, a, b):
    return a * z


@numba.njit(cache=True)
def sigma_constant(z, a, b):
    return a


@numba.njit(cache=True)
def sigma_tanh(z, a, b):
    return a + (b - a) * 0.5 * (1.0 + math.tanh(z - 1.0))


@numba.njit(cache=True)
def sigma_sine(z, a, b):
    return a + (b - a) * 0.5 * (1.0 + math.sin(z))


@numba.njit(cache=True)
def _wrap(ext, r, nx):
    for k in range(r):
        ext[k] = ext[nx + k]
        ext[nx + r + k] = ext[r + k]


@numba.njit(cache=True)
def run_steps(sig, a, b, u, xi, inv_dx, w_det, w_sto, split, cap, record_steps, snaps):
    """Advance ``u`` in place through ``xi.shape[0]`` exponential-Euler steps.

    ``u_{m+1} = w_det * u_m + w_sto * (sigma(u_m) xi_m / dx)`` with periodic
    convolutions.  When ``split`` is false the two stencils are identical and
    a single convolution of ``u + sigma(u) xi / dx`` is done.

    ``record_steps`` must be sorted; ``snaps[k]`` receives ``u`` after step
    ``record_steps[k]`` (step 0 is the initial state).

    Returns ``(status, step)``; ``step`` is the step whose output triggered a
    non-OK status.
    """
    nsteps, nx = xi.shape
    r = (w_det.size - 1) // 2
    ext = np.empty(nx + 2 * r)
    ext2 = np.empty(nx + 2 * r)
    out = np.empty(nx)
    rec = 0
    while rec < record_steps.size and record_steps[rec] == 0:
        snaps[rec, :] = u
        rec += 1
    for m in range(nsteps):
        row = xi[m]
        if split:
            for i in range(nx):
                v = u[i]
                ext[r + i] = v
                ext2[r + i] = sig(v, a, b) * row[i] * inv_dx
            _wrap(ext, r, nx)
            _wrap(ext2, r, nx)
        else:
            for i in range(nx):
                v = u[i]
                ext[r + i] = v + sig(v, a, b) * row[i] * inv_dx
            _wrap(ext, r, nx)
        for i in range(nx):
            out[i] = 0.0
        for d in range(-r, r + 1):
            wd = w_det[d + r]
            off = r - d
            for i in range(nx):
                out[i] += wd * ext[off + i]
        if split:
            for d in range(-r, r + 1):
                wd = w_sto[d + r]
                if wd == 0.0:
                    continue
                off = r - d
                for i in range(nx):
                    out[i] += wd * ext2[off + i]
        status = OK
        for i in range(nx):
            v = out[i]
            u[i] = v
            if not math.isfinite(v):
                status = NONFINITE
            elif abs(v) > cap and status == OK:
                status = CENSORED
        while rec < record_steps.size and record_steps[rec] == m + 1:
            snaps[rec, :] = u
            rec += 1
        if status != OK:
            return status, m + 1
    return OK, nsteps


@numba.njit(cache=True)
def apply_sigma(sig, a, b, values, xi_t, inv_dx, out):
    """``out[i, m] = sigma(values[i, m]) * xi_t[i, m] / dx`` for ``m < xi_t.shape[1]``."""
    nx, nt = xi_t.shape
    for i in range(nx):
        for m in range(nt):
            out[i, m] = sig(values[i, m], a, b) * xi_t[i, m] * inv_dx


@numba.njit(cache=True)
def window_accumulate(fh, gh, zpos, paired, out):
    """Windowed spatial sum in the temporal-frequency domain.

    ``out[i] = sum_k gh[k] * (fh[i - z_k] + fh[i + z_k])`` over non-negative
    offsets ``z_k``; the mirrored term is dropped where ``paired[k]`` is false
    (``z = 0`` or the Nyquist offset of an even grid).  Row ``i`` reads only
    rows of ``fh`` inside the window, always in the same order.
    """
    nx, nf = fh.shape
    for i in range(nx):
        acc = out[i]
        for q in range(nf):
            acc[q] = 0.0
        for k in range(zpos.size):
            z = zpos[k]
            g = gh[k]
            f1 = fh[(i - z) % nx]
            if paired[k]:
                f2 = fh[(i + z) % nx]
                for q in range(nf):
                    acc[q] += g[q] * (f1[q] + f2[q])
            else:
                for q in range(nf):
                    acc[q] += g[q] * f1[q]
