"""Materials, voxel grids, phantom geometries, beams, and input sampling.

Geometry conventions: all lengths in cm, energies in MeV, densities in g/cm^3.
Voxel i along an axis covers the half-open interval [lo + i*h, lo + (i+1)*h);
a position exactly on an interior face belongs to the lower-index voxel, and
the upper grid boundary belongs to the last voxel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError, OutOfDomainError
from .seeding import as_rng


@dataclass(frozen=True)
class Material:
    """Bulk material properties used by both dose engines.

    relative_stopping multiplies the water stopping power; x0 is the radiation
    length in cm used by the multiple-scattering kick.
    """

    name: str
    rho: float              # g/cm^3
    relative_stopping: float
    x0: float               # cm

    def __post_init__(self):
        for attr in ("rho", "relative_stopping", "x0"):
            v = getattr(self, attr)
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"material {self.name!r}: {attr} must be positive, got {v}")


WATER = Material("water", rho=1.0, relative_stopping=1.0, x0=36.08)
BONE = Material("bone", rho=1.85, relative_stopping=1.6, x0=16.8)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular voxel grid over an axis-aligned box.

    dims, lo and hi are per-axis tuples; 1-D, 2-D and 3-D grids are all
    supported (transport requires 3-D, the analytic model uses 1-D).
    """

    dims: tuple[int, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.dims) == len(self.lo) == len(self.hi)):
            raise ConfigError("dims, lo, hi must have equal length")
        if len(self.dims) not in (1, 2, 3):
            raise ConfigError(f"grid must be 1-, 2- or 3-dimensional, got {len(self.dims)}")
        for n, a, b in zip(self.dims, self.lo, self.hi):
            if int(n) < 1 or n != int(n):
                raise ConfigError(f"voxel counts must be positive integers, got {n}")
            if not b > a:
                raise ConfigError(f"extent ({a}, {b}) is empty")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "lo", tuple(float(a) for a in self.lo))
        object.__setattr__(self, "hi", tuple(float(b) for b in self.hi))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def voxel_size(self) -> tuple[float, ...]:
        return tuple((b - a) / n for n, a, b in zip(self.dims, self.lo, self.hi))

    @property
    def voxel_volume(self) -> float:
        """Product of per-axis voxel sizes (length/area/volume by dimension)."""
        return float(np.prod(self.voxel_size))

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lo[axis], self.hi[axis], self.dims[axis] + 1)

    def centers(self, axis: int) -> np.ndarray:
        e = self.edges(axis)
        return 0.5 * (e[:-1] + e[1:])

    def locate(self, position) -> tuple[int, ...]:
        """Voxel index containing ``position`` (lower-index voxel on faces)."""
        position = np.atleast_1d(np.asarray(position, dtype=float))
        if position.shape != (self.ndim,):
            raise ConfigError(f"position must have {self.ndim} components, got {position.shape}")
        idx = []
        for x, a, b, n in zip(position, self.lo, self.hi, self.dims):
            if x < a or x > b:
                raise OutOfDomainError(f"position component {x} outside [{a}, {b}]")
            t = (x - a) / ((b - a) / n)
            k = int(np.floor(t))
            if k == t and k > 0:
                k -= 1          # interior face -> lower-index voxel
            idx.append(min(k, n - 1))
        return tuple(idx)

    def drop_axis(self, axis: int) -> "VoxelGrid":
        keep = [i for i in range(self.ndim) if i != axis]
        return VoxelGrid(
            dims=tuple(self.dims[i] for i in keep),
            lo=tuple(self.lo[i] for i in keep),
            hi=tuple(self.hi[i] for i in keep),
        )


@dataclass(frozen=True)
class Phantom:
    """Voxel grid plus a per-voxel material index into ``materials``."""

    grid: VoxelGrid
    material_map: np.ndarray        # integer array of shape grid.dims
    materials: tuple[Material, ...]

    def __post_init__(self):
        mm = np.ascontiguousarray(self.material_map, dtype=np.int16)
        if mm.shape != self.grid.dims:
            raise GeometryError(f"material map shape {mm.shape} != grid dims {self.grid.dims}")
        if mm.min() < 0 or mm.max() >= len(self.materials):
            raise GeometryError("material map indexes outside the material table")
        mm.flags.writeable = False
        object.__setattr__(self, "material_map", mm)
        object.__setattr__(self, "materials", tuple(self.materials))

    def material_at(self, position) -> Material:
        return self.materials[int(self.material_map[self.grid.locate(position)])]

    def property_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat (rho, relative_stopping, x0) arrays aligned with raveled voxels."""
        rho = np.array([m.rho for m in self.materials])
        rel = np.array([m.relative_stopping for m in self.materials])
        x0 = np.array([m.x0 for m in self.materials])
        flat = self.material_map.ravel()
        return rho[flat], rel[flat], x0[flat]


def build_homogeneous_phantom(material: Material, grid: VoxelGrid) -> Phantom:
    return Phantom(grid, np.zeros(grid.dims, dtype=np.int16), (material,))


def build_slab_phantom(x1: float, x2: float, grid: VoxelGrid,
                       materials: tuple[Material, Material] = (WATER, BONE)) -> Phantom:
    """Water phantom with a bone slab normal to the x axis.

    The slab occupies x-centres in the open interval
    (-2.5 + x1 - x2, 2.5 + x1 + x2): centre shifted by x1, half-width changed
    by x2, so thickness is 5 + 2*x2 cm.
    """
    lo_edge = -2.5 + x1 - x2
    hi_edge = 2.5 + x1 + x2
    if hi_edge - lo_edge <= 0:
        raise GeometryError(
            f"slab interval ({lo_edge:.4g}, {hi_edge:.4g}) is empty (x2={x2} <= -2.5)")
    if lo_edge <= grid.lo[0] or hi_edge >= grid.hi[0]:
        raise GeometryError(
            f"slab interval ({lo_edge:.4g}, {hi_edge:.4g}) not interior to "
            f"x extent ({grid.lo[0]}, {grid.hi[0]})")
    cx = grid.centers(0)
    in_slab = (cx > lo_edge) & (cx < hi_edge)
    mm = np.zeros(grid.dims, dtype=np.int16)
    mm[in_slab] = 1
    return Phantom(grid, mm, materials)


def material_at(phantom: Phantom, position) -> Material:
    return phantom.material_at(position)


@dataclass(frozen=True)
class BeamSpec:
    """Gaussian beam model: entry point, central direction, and spreads.

    direction must be a unit 3-vector; spatial_sigma spreads the entry point
    in the plane transverse to it, angular_sigma tilts the initial direction,
    and the initial energy is N(energy_mean, energy_sigma^2).
    """

    entry: tuple[float, float, float]
    direction: tuple[float, float, float]
    energy_mean: float          # MeV
    energy_sigma: float = 0.0   # MeV
    spatial_sigma: float = 0.0  # cm
    angular_sigma: float = 0.0  # rad

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,):
            raise ConfigError("beam direction must have 3 components")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ConfigError(f"beam direction must be unit length, |d| = {np.linalg.norm(d)}")
        if self.energy_mean <= 0:
            raise ConfigError("beam energy_mean must be positive")
        for attr in ("energy_sigma", "spatial_sigma", "angular_sigma"):
            if getattr(self, attr) < 0:
                raise ConfigError(f"beam {attr} must be non-negative")
        object.__setattr__(self, "entry", tuple(float(v) for v in self.entry))
        object.__setattr__(self, "direction", tuple(float(v) for v in d))


def direction_from_angle(theta: float) -> tuple[float, float, float]:
    """Unit vector (cos theta, sin theta, 0) for beams in the x-y plane."""
    return (float(np.cos(theta)), float(np.sin(theta)), 0.0)


@dataclass(frozen=True)
class InputDistribution:
    """Independent Gaussians, one per input component.

    sigma entries may be zero (degenerate components).  ``lower`` holds
    optional per-component floors applied after sampling; physics keeps
    energies positive that way while everything else stays untruncated.
    """

    mean: np.ndarray
    sigma: np.ndarray
    names: tuple[str, ...] = ()
    lower: np.ndarray | None = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float)).copy()
        if mean.shape != sigma.shape or mean.ndim != 1:
            raise ConfigError("mean and sigma must be 1-D arrays of equal length")
        if np.any(sigma < 0):
            raise ConfigError("sigma components must be non-negative")
        names = tuple(self.names) if self.names else tuple(f"x{i+1}" for i in range(mean.size))
        if len(names) != mean.size:
            raise ConfigError("names length must match dimension")
        if self.lower is None:
            lower = np.full(mean.size, -np.inf)
        else:
            lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
            if lower.shape != mean.shape:
                raise ConfigError("lower bounds must match dimension")
        for arr in (mean, sigma, lower):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lower)

    @property
    def dim(self) -> int:
        return self.mean.size

    def shifted(self, k_sigma: float) -> "InputDistribution":
        """Same spread with every mean moved by k_sigma standard deviations."""
        return InputDistribution(self.mean + k_sigma * self.sigma, self.sigma,
                                 self.names, self.lower)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma.tolist(),
            "names": list(self.names),
            "lower": [None if not np.isfinite(v) else v for v in self.lower],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InputDistribution":
        lower = d.get("lower")
        if lower is not None:
            lower = [-np.inf if v is None else v for v in lower]
        return cls(np.asarray(d["mean"]), np.asarray(d["sigma"]),
                   tuple(d.get("names", ())), None if lower is None else np.asarray(lower))


def sample_inputs(dist: InputDistribution, count: int, seed) -> np.ndarray:
    """Draw ``count`` input vectors; deterministic for a fixed seed.

    Returns an array of shape (count, dist.dim).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = as_rng(seed)
    x = dist.mean + dist.sigma * rng.standard_normal((count, dist.dim))
    np.maximum(x, dist.lower, out=x)
    return x
