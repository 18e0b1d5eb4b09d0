"""Periodic grids on flat tori, sampled fields and spectral operators."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from errors import DomainError

# Grid Service

CSV_FORMAT = "%.17g"


class FieldKind(str, enum.Enum):
    POSITION = "position"
    VELOCITY = "velocity"
    DAMPING = "damping-snapshot"


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on T^dim with `points_per_axis` nodes per axis."""

    dim: int
    points_per_axis: int
    period: float = 2 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"grid dim must be 1 or 2, got {self.dim}")
        if self.points_per_axis < 4:
            raise DomainError(f"points_per_axis must be >= 4, got {self.points_per_axis}")
        if not self.period > 0:
            raise DomainError(f"period must be positive, got {self.period}")

    @property
    def spacing(self) -> float:
        return self.period / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def lambda_max(self) -> float:
        """Largest resolved frequency |xi| (per-axis Nyquist scaled by sqrt(dim))."""
        return math.pi * self.points_per_axis * math.sqrt(self.dim) / self.period

    def axis(self) -> np.ndarray:
        return np.arange(self.points_per_axis) * self.spacing

    def nodes(self) -> np.ndarray:
        """Node coordinates with shape `grid.shape + (dim,)`."""
        axes = [self.axis()] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def wavenumbers(self) -> List[np.ndarray]:
        """Angular wavenumbers along each axis, broadcast to the grid shape."""
        k1 = 2 * math.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)
        return list(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    def k_squared(self) -> np.ndarray:
        return sum(k ** 2 for k in self.wavenumbers())

    def resolves(self, wavenumber: float) -> bool:
        """Resolution rule: at least 4 points per axis per unit of wavenumber."""
        return self.points_per_axis >= 4 * wavenumber


@dataclass(frozen=True, eq=False)
class Field:
    """Complex samples of a function on the nodes of a grid."""

    grid: TorusGrid
    values: np.ndarray
    kind: FieldKind = FieldKind.POSITION

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != self.grid.shape:
            raise DomainError(
                f"field has shape {values.shape}, grid expects {self.grid.shape}"
            )
        if self.kind is FieldKind.DAMPING:
            if np.iscomplexobj(values) and np.any(values.imag != 0):
                raise DomainError("damping snapshots must be real")
            values = np.real(values).astype(float)
            if np.any(values < 0):
                raise DomainError("damping snapshots must be nonnegative")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, kind: Optional[FieldKind] = None) -> "Field":
        return Field(self.grid, values, kind or self.kind)


def _check_same_grid(*fields: Field) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise DomainError(f"grid mismatch: {f.grid} vs {grid}")
    return grid


def laplacian(f: Field) -> Field:
    """Exact Laplacian of the trigonometric interpolant of `f`."""
    if f.values.ndim != f.grid.dim:
        raise DomainError("field dimension does not match its grid")
    if f.kind is not FieldKind.POSITION:
        raise DomainError(f"laplacian takes a position field, got {f.kind.value}")
    spectrum = np.fft.fftn(f.values)
    out = np.fft.ifftn(-f.grid.k_squared() * spectrum)
    if not np.iscomplexobj(f.values):
        out = out.real
    return f.with_values(out, FieldKind.POSITION)


def inner(f: Field, g: Field) -> complex:
    """Quadrature of the integral of f times conj(g)."""
    grid = _check_same_grid(f, g)
    value = np.sum(f.values * np.conj(g.values)) * grid.cell_volume
    return complex(value)


def l2_norm(f: Field) -> float:
    return math.sqrt(max(inner(f, f).real, 0.0))


def gradient_energy(u: Field) -> float:
    """Integral of |grad u|^2 computed in coefficient space."""
    spectrum = np.fft.fftn(u.values)
    total = np.sum(u.grid.k_squared() * np.abs(spectrum) ** 2) / u.grid.n_nodes
    return float(total * u.grid.cell_volume)


def energy(u: Field, v: Field) -> float:
    """E = 1/2 * integral of |grad u|^2 + |v|^2."""
    grid = _check_same_grid(u, v)
    kinetic = float(np.sum(np.abs(v.values) ** 2) * grid.cell_volume)
    return 0.5 * (gradient_energy(u) + kinetic)


def field_to_csv(f: Field, path) -> None:
    """One row per node: index columns, then value_re, value_im."""
    grid = f.grid
    index = np.indices(grid.shape).reshape(grid.dim, -1).T
    values = np.asarray(f.values, dtype=complex).reshape(-1)
    table = np.column_stack([index, values.real, values.imag])
    names = ["i", "j"][: grid.dim] + ["value_re", "value_im"]
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt=CSV_FORMAT)


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    """Time series of energy and accumulated observation for one run."""

    times: np.ndarray
    energy: np.ndarray
    sigma: Optional[np.ndarray] = None
    kinetic_obs: Optional[np.ndarray] = None
    obs_matches_damping: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        energies = np.asarray(self.energy, dtype=float)
        if times.ndim != 1 or energies.shape != times.shape:
            raise DomainError("trace times and energy must be 1-d sequences of equal length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DomainError("trace times must be strictly increasing")
        if np.any(energies < 0):
            raise DomainError("trace energies must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "energy", energies)
        for name in ("sigma", "kinetic_obs"):
            channel = getattr(self, name)
            if channel is not None:
                channel = np.asarray(channel, dtype=float)
                if channel.shape != times.shape:
                    raise DomainError(f"trace channel {name} has the wrong length")
                object.__setattr__(self, name, channel)

    def __len__(self) -> int:
        return self.times.size

    def with_sigma(self, sigma: np.ndarray) -> "EnergyTrace":
        return EnergyTrace(
            self.times, self.energy, sigma, self.kinetic_obs, self.obs_matches_damping, dict(self.meta)
        )

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the sample at time `t`; raises when `t` is not sampled."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a trace sample")
        return i

    def to_csv(self, path) -> None:
        nan = np.full(self.times.shape, np.nan)
        sigma = self.sigma if self.sigma is not None else nan
        obs = self.kinetic_obs if self.kinetic_obs is not None else nan
        table = np.column_stack([self.times, self.energy, sigma, obs])
        np.savetxt(path, table, delimiter=",", header="t,energy,sigma,cum_obs", comments="", fmt=CSV_FORMAT)

    @classmethod
    def from_csv(cls, path) -> "EnergyTrace":
        table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        sigma = None if np.all(np.isnan(table[:, 2])) else table[:, 2]
        obs = None if np.all(np.isnan(table[:, 3])) else table[:, 3]
        return cls(table[:, 0], table[:, 1], sigma, obs)
