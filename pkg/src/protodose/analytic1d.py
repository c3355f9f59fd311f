"""Closed-form 1-D proton depth-dose curves.

The range-energy relation is the power law R(E) = alpha * E**p, so a proton
entering with energy E carries residual energy E(z) = ((R - z)/alpha)**(1/p)
at depth z and the linear stopping power is

    S(z) = -dE/dz = (R - z)**(1/p - 1) / (p * alpha**(1/p)).

S diverges integrably at z -> R, so per-voxel deposits are computed from the
antiderivative rather than by sampling S: the energy released in [z0, z1] is
((R - z0)**(1/p) - (R - z1)**(1/p)) / alpha**(1/p), which makes the summed
energy over any grid covering [0, R] equal to E exactly.  Polyenergetic
curves average monoenergetic ones over midpoint-quantile nodes of a Gaussian
spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, EdgeNotFoundError, SpectrumError

# Water Bragg-Kleeman constants, R in cm for E in MeV.
WATER_ALPHA = 0.00246
WATER_P = 1.75

DEFAULT_SPECTRUM_NODES = 64
R80_FRACTION = 0.8


@dataclass(frozen=True)
class BraggKleemanParams:
    """Range-law constants plus medium density and nominal peak energy."""

    alpha: float    # cm / MeV^p
    p: float
    rho: float      # g/cm^3
    e_peak: float   # MeV

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not self.e_peak > 0:
            raise ConfigError(f"e_peak must be positive, got {self.e_peak}")


@dataclass(frozen=True)
class DoseCurve:
    """Per-voxel dose (MeV cm^3/g per proton) on a 1-D depth grid of centres."""

    depth: np.ndarray
    dose: np.ndarray

    def __post_init__(self):
        depth = np.ascontiguousarray(self.depth, dtype=float)
        dose = np.ascontiguousarray(self.dose, dtype=float)
        if depth.ndim != 1 or depth.shape != dose.shape:
            raise ConfigError("depth and dose must be 1-D arrays of equal length")
        if depth.size < 2 or np.any(np.diff(depth) <= 0):
            raise ConfigError("depth grid must be strictly increasing with >= 2 points")
        if np.any(dose < 0):
            raise ConfigError("dose values must be non-negative")
        for arr in (depth, dose):
            arr.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "dose", dose)

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.depth, self.dose]),
                   delimiter=",", header="depth_cm,dose", comments="")


def csda_range(alpha: float, p: float, energy: float) -> float:
    """Continuous-slowing-down range R = alpha * E**p in cm."""
    if alpha <= 0 or p <= 1:
        raise ConfigError(f"need alpha > 0 and p > 1, got alpha={alpha}, p={p}")
    if energy < 0:
        raise ConfigError(f"energy must be non-negative, got {energy}")
    return alpha * energy ** p


def _per_voxel_energy(alpha: float, p: float, edges: np.ndarray, energy: float) -> np.ndarray:
    """Energy (MeV) released per voxel by one proton of the given energy."""
    r = alpha * energy ** p
    c = np.clip(r - edges, 0.0, None) ** (1.0 / p)
    return (c[:-1] - c[1:]) / alpha ** (1.0 / p)


def _check_edges(edges) -> np.ndarray:
    edges = np.ascontiguousarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ConfigError("edges must be a strictly increasing 1-D array")
    if edges[0] < 0:
        raise ConfigError("depth grid must start at or beyond zero depth")
    return edges


def depth_dose_mono(params: BraggKleemanParams, edges, energy: float | None = None) -> DoseCurve:
    """Monoenergetic depth-dose on the voxel grid given by ``edges``.

    Dose per voxel is the closed-form energy release divided by rho, zero in
    voxels entirely beyond the range.
    """
    edges = _check_edges(edges)
    e = params.e_peak if energy is None else float(energy)
    if e <= 0:
        raise SpectrumError(f"proton energy must be positive, got {e}")
    dep = _per_voxel_energy(params.alpha, params.p, edges, e)
    return DoseCurve(0.5 * (edges[:-1] + edges[1:]), dep / params.rho)


def spectrum_energies(e_peak: float, variance: float,
                      nodes: int = DEFAULT_SPECTRUM_NODES) -> np.ndarray:
    """Midpoint-quantile node energies of N(e_peak, variance).

    variance is in MeV^2.  Node k sits at the ((k + 1/2)/K)-quantile; all
    nodes carry equal weight.  Any non-positive node energy raises.
    """
    if nodes < 1:
        raise ConfigError(f"need at least one spectrum node, got {nodes}")
    if variance < 0:
        raise ConfigError(f"spectrum variance must be non-negative, got {variance}")
    q = (np.arange(nodes) + 0.5) / nodes
    energies = e_peak + np.sqrt(variance) * ndtri(q)
    if np.any(energies <= 0):
        raise SpectrumError(
            f"spectrum node energy {energies.min():.4g} MeV <= 0 "
            f"(e_peak={e_peak}, variance={variance}, nodes={nodes})")
    return energies


def depth_dose_spectrum(params: BraggKleemanParams, edges, variance: float,
                        nodes: int = DEFAULT_SPECTRUM_NODES) -> DoseCurve:
    """Equal-weight average of monoenergetic curves over the Gaussian spectrum.

    With variance 0 (or a single node at the median) this reduces to the
    monoenergetic curve at e_peak.
    """
    edges = _check_edges(edges)
    energies = spectrum_energies(params.e_peak, variance, nodes)
    powers = np.clip(params.alpha * energies[:, None] ** params.p - edges[None, :],
                     0.0, None) ** (1.0 / params.p)
    dep = (powers[:, :-1] - powers[:, 1:]).mean(axis=0) / params.alpha ** (1.0 / params.p)
    return DoseCurve(0.5 * (edges[:-1] + edges[1:]), dep / params.rho)


def distal_edge(curve: DoseCurve, fraction: float = R80_FRACTION) -> float:
    """Depth distal of the peak where dose first falls below fraction * peak.

    Linear interpolation between the bracketing voxel centres; the default
    fraction 0.8 gives the R80 point used as the scalar range observable.
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    dose = curve.dose
    peak = int(np.argmax(dose))
    target = fraction * dose[peak]
    if dose[peak] <= 0:
        raise EdgeNotFoundError("curve has no positive peak")
    below = np.nonzero(dose[peak + 1:] < target)[0]
    if below.size == 0:
        raise EdgeNotFoundError(
            f"dose never falls below {fraction:.3g} * peak distal of the peak")
    j = peak + 1 + int(below[0])
    z0, z1 = curve.depth[j - 1], curve.depth[j]
    d0, d1 = dose[j - 1], dose[j]
    return float(z0 + (z1 - z0) * (d0 - target) / (d0 - d1))
