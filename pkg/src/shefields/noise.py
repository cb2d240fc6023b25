"""Discrete space-time white noise on a periodic mesh.

Every coupled solver in the package consumes the same :class:`NoiseGrid`.
Entry ``(j, i)`` is the white-noise mass of the cell
``[j dt, (j+1) dt) x [i dx, (i+1) dx)``, so it is ``Normal(0, dt*dx)`` and
independent of every other entry.  Increments are stored raw; solvers divide
by ``dx`` themselves.

Randomness comes from numpy's ``PCG64`` bit generator, seeded through
``SeedSequence(seed)``.  Ensembles use ``seed = base_seed + path_index`` so a
path's noise never depends on how many workers ran the ensemble.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PreconditionError

# dt <= dx**2 is checked with this relative slack so that grids built from
# decimal literals (dt=1e-4, dx=1e-2) are not rejected by one rounding.
_STABILITY_RTOL = 1e-12

DUMP_HEADER = struct.Struct("<qqddQ")


@dataclass(frozen=True)
class GridSpec:
    """Periodic space-time mesh.

    Parameters
    ----------
    nx : int
        Number of spatial points on ``[0, length)``.
    length : float
        Period ``L`` of the spatial domain.
    dt : float
        Time step.
    nt : int
        Number of time steps the mesh covers.
    """

    nx: int
    length: float
    dt: float
    nt: int

    def __post_init__(self):
        errors = []
        if not isinstance(self.nx, (int, np.integer)) or self.nx <= 0:
            errors.append(f"nx must be a positive integer, got {self.nx!r}")
        if not isinstance(self.nt, (int, np.integer)) or self.nt <= 0:
            errors.append(f"nt must be a positive integer, got {self.nt!r}")
        if not (self.length > 0 and math.isfinite(self.length)):
            errors.append(f"length must be positive, got {self.length!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            errors.append(f"dt must be positive, got {self.dt!r}")
        if errors:
            raise ConfigurationError("; ".join(errors))
        if self.dt > self.dx**2 * (1 + _STABILITY_RTOL):
            raise ConfigurationError(
                f"stability rule dt <= dx**2 violated: dt={self.dt!r}, dx**2={self.dx**2!r}"
            )

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def t_max(self) -> float:
        return self.nt * self.dt

    @property
    def x(self) -> np.ndarray:
        """Grid coordinates ``i * dx``."""
        return np.arange(self.nx) * self.dx

    @classmethod
    def from_resolution(cls, length, dx, t_end, dt):
        """Smallest grid with spacing ``dx`` covering ``length`` and reaching ``t_end``.

        The length is rounded up to a whole number of cells; ``t_end`` must be
        an integer multiple of ``dt`` (up to 1e-9 relative).
        """
        nx = int(math.ceil(length / dx - 1e-9))
        nt = steps_for(t_end, dt)
        return cls(nx=nx, length=nx * dx, dt=dt, nt=nt)

    def steps_to(self, t_end) -> int:
        """Number of steps needed to reach ``t_end``; must fit in the mesh."""
        n = steps_for(t_end, self.dt)
        if n > self.nt:
            raise ConfigurationError(f"t_end={t_end} exceeds the noise extent {self.t_max}")
        return n


def steps_for(t_end, dt) -> int:
    n = int(round(t_end / dt))
    if n <= 0 or abs(n * dt - t_end) > 1e-9 * max(t_end, dt):
        raise ConfigurationError(f"t_end={t_end!r} is not a positive multiple of dt={dt!r}")
    return n


def domain_length(t, window=0.0, factor=6.0):
    """Domain length ``window + factor*sqrt(t)`` used by the runners.

    Wrap-around contamination of the periodic solution decays like
    ``exp(-L**2 / (4 t))``; ``factor=6`` keeps it below 1e-4.
    """
    return window + factor * math.sqrt(t)


@dataclass(frozen=True, eq=False)
class NoiseGrid:
    """Immutable ``nt x nx`` array of white-noise increments."""

    spec: GridSpec
    seed: int
    increments: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.increments, dtype=np.float64)
        if arr.shape != (self.spec.nt, self.spec.nx):
            raise ConfigurationError(
                f"increments shape {arr.shape} does not match grid ({self.spec.nt}, {self.spec.nx})"
            )
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "increments", arr)

    @classmethod
    def zeros(cls, spec, seed=0):
        """Noise identically zero; the deterministic heat flow."""
        return cls(spec, seed, np.zeros((spec.nt, spec.nx)))

    def dump(self, path):
        """Write the binary replay format (little-endian header + row-major float64)."""
        s = self.spec
        with open(path, "wb") as fh:
            fh.write(DUMP_HEADER.pack(s.nx, s.nt, s.dt, s.dx, self.seed & (2**64 - 1)))
            fh.write(np.ascontiguousarray(self.increments, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if len(raw) < DUMP_HEADER.size:
            raise ConfigurationError(f"{path}: truncated noise dump header")
        nx, nt, dt, dx, seed = DUMP_HEADER.unpack_from(raw)
        payload = np.frombuffer(raw, dtype="<f8", offset=DUMP_HEADER.size)
        if payload.size != nx * nt:
            raise ConfigurationError(
                f"{path}: payload has {payload.size} values, header promises {nx * nt}"
            )
        spec = GridSpec(nx=nx, length=nx * dx, dt=dt, nt=nt)
        return cls(spec, seed, payload.reshape(nt, nx).astype(np.float64))


def _generator(seed):
    return np.random.Generator(np.random.PCG64(seed))


def sample_noise_grid(spec: GridSpec, seed: int) -> NoiseGrid:
    """Draw a fresh grid; a pure function of ``(spec, seed)``."""
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    inc = np.empty((spec.nt, spec.nx))
    _generator(seed).standard_normal(out=inc)
    inc *= math.sqrt(spec.dt * spec.dx)
    return NoiseGrid(spec, seed, inc)


def periodic_distance(indices, center, nx):
    d = np.abs(np.asarray(indices) - center) % nx
    return np.minimum(d, nx - d)


def resample_outside_window(noise: NoiseGrid, center_index: int, radius_cells: int, seed2: int) -> NoiseGrid:
    """Keep columns within ``radius_cells`` (periodic) of the center, redraw the rest.

    The replacement values come from ``sample_noise_grid(spec, seed2)`` so the
    operation is deterministic.  The input grid is not modified.
    """
    if radius_cells < 0:
        raise PreconditionError(f"radius_cells must be >= 0, got {radius_cells}")
    nx = noise.spec.nx
    keep = periodic_distance(np.arange(nx), center_index % nx, nx) <= radius_cells
    if keep.all():
        return noise
    fresh = sample_noise_grid(noise.spec, seed2).increments.copy()
    fresh[:, keep] = noise.increments[:, keep]
    return NoiseGrid(noise.spec, seed2, fresh)


def resample_inside_window(noise: NoiseGrid, center_index: int, radius_cells: int, seed2: int) -> NoiseGrid:
    """Complement of :func:`resample_outside_window`: redraw only the window."""
    if radius_cells < 0:
        raise PreconditionError(f"radius_cells must be >= 0, got {radius_cells}")
    nx = noise.spec.nx
    inside = periodic_distance(np.arange(nx), center_index % nx, nx) <= radius_cells
    fresh = noise.increments.copy()
    fresh[:, inside] = sample_noise_grid(noise.spec, seed2).increments[:, inside]
    return NoiseGrid(noise.spec, seed2, fresh)


def sample_shifted_noise_grid(spec: GridSpec, seed: int, shift) -> tuple[NoiseGrid, float]:
    """Draw ``xi = eta + shift`` and return it with ``log dP/dQ(xi)``.

    ``eta`` is the grid :func:`sample_noise_grid` would return for ``seed``,
    so a zero shift reproduces it exactly with log-weight 0.  The weight is
    the Cameron-Martin density of the unshifted law with respect to the
    shifted one, ``exp(-<shift, eta>/v - |shift|^2/(2v))`` with ``v = dt*dx``.
    """
    shift = np.asarray(shift, dtype=np.float64)
    if shift.shape != (spec.nt, spec.nx):
        raise ConfigurationError(f"shift shape {shift.shape} does not match grid ({spec.nt}, {spec.nx})")
    eta = sample_noise_grid(spec, seed).increments
    v = spec.dt * spec.dx
    log_weight = -float(np.sum(shift * eta)) / v - 0.5 * float(np.sum(shift * shift)) / v
    return NoiseGrid(spec, seed, eta + shift), log_weight
