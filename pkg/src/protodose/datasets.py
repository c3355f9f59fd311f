"""Dataset generation, persistence, and splitting.

Three generators produce (input vector, flattened dose target) pairs:

* bragg1d: analytic polyenergetic depth-dose curves for x = (alpha, p, rho,
  E_peak), plus a scalar distal-edge target per sample for range models.
* slab2d: Monte Carlo dose through the shifted bone slab for x = (x1, x2)
  or (x1, x2, x3, x4) with beam angle pi + x3 and energy 150 + x4 MeV,
  projected along z and log10-transformed.
* beam3d: Monte Carlo dose for a Gaussian beam entering the z = hi face at
  (x1, x2), log10-transformed in place.

On disk a dataset is a directory with manifest.json plus arrays.bin holding
every tensor as little-endian float32, each with an offset and CRC-32 in the
manifest, so a manifest read alone answers shape/provenance questions.
"""

from __future__ import annotations

import dataclasses
import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .analytic1d import (DEFAULT_SPECTRUM_NODES, R80_FRACTION, BraggKleemanParams,
                         depth_dose_spectrum, distal_edge)
from .errors import ConfigError, DatasetFormatError, SpectrumError
from .mctransport import (TransportConfig, estimate_dose, log_transform,
                          project_log_dose)
from .phantom import (BONE, WATER, BeamSpec, InputDistribution, Phantom,
                      VoxelGrid, build_homogeneous_phantom, build_slab_phantom,
                      direction_from_angle, sample_inputs)
from .seeding import child_rng, child_seed

FORMAT_VERSION = 1

_SALT_INPUTS = 11
_SALT_FIELD = 12
_SALT_SPLIT = 13


def grid_to_dict(grid: VoxelGrid) -> dict:
    return {"dims": list(grid.dims), "lo": list(grid.lo), "hi": list(grid.hi)}


def grid_from_dict(d: dict) -> VoxelGrid:
    return VoxelGrid(tuple(d["dims"]), tuple(d["lo"]), tuple(d["hi"]))


@dataclass
class Dataset:
    """In-memory dataset: float32 tensors plus the manifest fields."""

    experiment: str
    inputs: np.ndarray                 # (N, d) float32
    targets: np.ndarray                # (N, M) float32
    output_dims: tuple[int, ...]
    log_targets: bool
    generator: dict
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float32)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise DatasetFormatError("inputs and targets must be 2-D")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DatasetFormatError("inputs and targets must have equal row counts")
        if int(np.prod(self.output_dims)) != self.targets.shape[1]:
            raise DatasetFormatError(
                f"output_dims {self.output_dims} incompatible with "
                f"target width {self.targets.shape[1]}")
        self.output_dims = tuple(int(v) for v in self.output_dims)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, name: str, require_nonempty: bool = True):
        """(inputs, targets) for a named split."""
        if name not in self.splits:
            raise DatasetFormatError(f"no split named {name!r}")
        idx = self.splits[name]
        if require_nonempty and idx.size == 0:
            raise DatasetFormatError(f"split {name!r} is empty but its consumer needs data")
        return self.inputs[idx], self.targets[idx]

    def subset_extra(self, key: str, name: str, require_nonempty: bool = True) -> np.ndarray:
        if key not in self.extras:
            raise DatasetFormatError(f"no extra tensor named {key!r}")
        idx = self.splits[name]
        if require_nonempty and idx.size == 0:
            raise DatasetFormatError(f"split {name!r} is empty but its consumer needs data")
        return self.extras[key][idx]


def generate_1d(count: int, dist: InputDistribution, grid: VoxelGrid,
                spectrum_variance: float = 3.0,
                nodes: int = DEFAULT_SPECTRUM_NODES, seed: int = 0,
                range_fraction: float = R80_FRACTION) -> Dataset:
    """Analytic curves for x = (alpha, p, rho, E_peak) on a 1-D depth grid."""
    if grid.ndim != 1:
        raise ConfigError("bragg1d expects a 1-D depth grid")
    if dist.dim != 4:
        raise ConfigError("bragg1d expects 4 input components (alpha, p, rho, E_peak)")
    xs = sample_inputs(dist, count, child_rng(seed, _SALT_INPUTS))
    edges = grid.edges(0)
    targets = np.empty((count, grid.dims[0]), dtype=np.float32)
    ranges = np.empty(count, dtype=np.float32)
    for i in range(count):
        try:
            params = BraggKleemanParams(*xs[i])
            curve = depth_dose_spectrum(params, edges, spectrum_variance, nodes)
            ranges[i] = distal_edge(curve, range_fraction)
        except (ConfigError, SpectrumError) as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        targets[i] = curve.dose
    generator = {
        "name": "bragg1d", "seed": int(seed), "dist": dist.to_dict(),
        "grid": grid_to_dict(grid), "spectrum_variance": spectrum_variance,
        "nodes": nodes, "range_fraction": range_fraction,
    }
    return Dataset("bragg1d", xs, targets, (grid.dims[0],), False, generator,
                   extras={"range_cm": ranges})


def slab_scene(x, grid: VoxelGrid, nominal_energy: float = 150.0,
               energy_sigma: float = 1.0) -> tuple[Phantom, BeamSpec]:
    """Phantom and beam for one slab2d input vector.

    The beam is a zero-width pencil entering the x = hi face at the centre
    of the transverse extents, aimed along angle pi (+ x3 when present) in
    the x-y plane; energy is nominal (+ x4 when present) with the given
    Gaussian width.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size not in (2, 4):
        raise ConfigError(f"slab2d inputs have 2 or 4 components, got {x.size}")
    theta = np.pi + (x[2] if x.size == 4 else 0.0)
    energy = nominal_energy + (x[3] if x.size == 4 else 0.0)
    if energy <= 0:
        raise ConfigError(f"beam energy {energy} MeV must be positive")
    ph = build_slab_phantom(float(x[0]), float(x[1]), grid, (WATER, BONE))
    entry = (grid.hi[0],
             0.5 * (grid.lo[1] + grid.hi[1]),
             0.5 * (grid.lo[2] + grid.hi[2]))
    beam = BeamSpec(entry, direction_from_angle(theta), energy_mean=energy,
                    energy_sigma=energy_sigma)
    return ph, beam


def generate_2d(count: int, dist: InputDistribution, grid: VoxelGrid,
                histories: int, seed: int = 0,
                cfg: TransportConfig = TransportConfig(),
                nominal_energy: float = 150.0,
                energy_sigma: float = 1.0) -> Dataset:
    """Monte Carlo slab targets, projected along z and log10-transformed."""
    if grid.ndim != 3:
        raise ConfigError("slab2d expects a 3-D grid (one voxel thick in z)")
    if dist.dim not in (2, 4):
        raise ConfigError("slab2d expects 2 or 4 input components")
    xs = sample_inputs(dist, count, child_rng(seed, _SALT_INPUTS))
    width = grid.dims[0] * grid.dims[1]
    targets = np.empty((count, width), dtype=np.float32)
    for i in range(count):
        try:
            ph, beam = slab_scene(xs[i], grid, nominal_energy, energy_sigma)
        except ConfigError as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        fld = estimate_dose(ph, beam, histories, cfg,
                            seed=child_seed(seed, _SALT_FIELD, i))
        targets[i] = project_log_dose(fld, axis=2).values.ravel()
    generator = {
        "name": "slab2d", "seed": int(seed), "dist": dist.to_dict(),
        "grid": grid_to_dict(grid), "histories": int(histories),
        "transport": dataclasses.asdict(cfg),
        "nominal_energy": nominal_energy, "energy_sigma": energy_sigma,
    }
    return Dataset("slab2d", xs, targets, (grid.dims[0], grid.dims[1]), True, generator)


def beam3d_scene(x, grid: VoxelGrid, energy_mean: float = 200.0,
                 energy_sigma: float = 3.0, spatial_sigma: float = 0.65,
                 angular_sigma: float = 0.0032) -> tuple[Phantom, BeamSpec]:
    """Water phantom and downward beam entering the z = hi face at (x1, x2)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != 2:
        raise ConfigError(f"beam3d inputs have 2 components, got {x.size}")
    ph = build_homogeneous_phantom(WATER, grid)
    beam = BeamSpec((float(x[0]), float(x[1]), grid.hi[2]), (0.0, 0.0, -1.0),
                    energy_mean=energy_mean, energy_sigma=energy_sigma,
                    spatial_sigma=spatial_sigma, angular_sigma=angular_sigma)
    return ph, beam


def generate_3d(count: int, dist: InputDistribution, grid: VoxelGrid,
                histories: int, seed: int = 0,
                cfg: TransportConfig = TransportConfig(),
                energy_mean: float = 200.0, energy_sigma: float = 3.0,
                spatial_sigma: float = 0.65,
                angular_sigma: float = 0.0032) -> Dataset:
    """Monte Carlo 3-D dose targets, log10-transformed voxelwise."""
    if grid.ndim != 3:
        raise ConfigError("beam3d expects a 3-D grid")
    if dist.dim != 2:
        raise ConfigError("beam3d expects 2 input components (entry x, entry y)")
    xs = sample_inputs(dist, count, child_rng(seed, _SALT_INPUTS))
    targets = np.empty((count, grid.n_voxels), dtype=np.float32)
    for i in range(count):
        try:
            ph, beam = beam3d_scene(xs[i], grid, energy_mean, energy_sigma,
                                    spatial_sigma, angular_sigma)
        except ConfigError as exc:
            raise type(exc)(f"sample {i}: {exc}") from exc
        fld = estimate_dose(ph, beam, histories, cfg,
                            seed=child_seed(seed, _SALT_FIELD, i))
        targets[i] = log_transform(fld).values.ravel()
    generator = {
        "name": "beam3d", "seed": int(seed), "dist": dist.to_dict(),
        "grid": grid_to_dict(grid), "histories": int(histories),
        "transport": dataclasses.asdict(cfg),
        "energy_mean": energy_mean, "energy_sigma": energy_sigma,
        "spatial_sigma": spatial_sigma, "angular_sigma": angular_sigma,
    }
    return Dataset("beam3d", xs, targets, grid.dims, True, generator)


def regenerate_sample(generator: dict, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Recompute one sample from its provenance record.

    Returns (input vector, float32 target row) identical to what the
    original generation run stored at ``index``.
    """
    name = generator["name"]
    seed = generator["seed"]
    dist = InputDistribution.from_dict(generator["dist"])
    grid = grid_from_dict(generator["grid"])
    count = index + 1
    x = sample_inputs(dist, count, child_rng(seed, _SALT_INPUTS))[index]
    if name == "bragg1d":
        curve = depth_dose_spectrum(BraggKleemanParams(*x), grid.edges(0),
                                    generator["spectrum_variance"], generator["nodes"])
        return x, curve.dose.astype(np.float32)
    cfg = TransportConfig(**generator["transport"])
    fseed = child_seed(seed, _SALT_FIELD, index)
    if name == "slab2d":
        ph, beam = slab_scene(x, grid, generator["nominal_energy"],
                              generator["energy_sigma"])
        fld = estimate_dose(ph, beam, generator["histories"], cfg, seed=fseed)
        return x, project_log_dose(fld, axis=2).values.ravel().astype(np.float32)
    if name == "beam3d":
        ph, beam = beam3d_scene(x, grid, generator["energy_mean"],
                                generator["energy_sigma"], generator["spatial_sigma"],
                                generator["angular_sigma"])
        fld = estimate_dose(ph, beam, generator["histories"], cfg, seed=fseed)
        return x, log_transform(fld).values.ravel().astype(np.float32)
    raise DatasetFormatError(f"unknown generator {name!r}")


def split(dataset: Dataset, fractions: dict[str, float], seed: int = 0) -> Dataset:
    """Assign every sample to exactly one named split, in place.

    Fractions must be non-negative and sum to 1; sizes use largest-remainder
    rounding so they are exact when the products are integers.  The
    assignment is a seeded permutation, deterministic per seed.
    """
    names = list(fractions)
    fr = np.array([fractions[k] for k in names], dtype=float)
    if np.any(fr < 0):
        raise ConfigError("split fractions must be non-negative")
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fr.sum()}")
    n = dataset.n
    raw = fr * n
    sizes = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - sizes)):
        if sizes.sum() == n:
            break
        sizes[j] += 1
    perm = child_rng(seed, _SALT_SPLIT).permutation(n)
    out, start = {}, 0
    for name, size in zip(names, sizes):
        out[name] = np.sort(perm[start:start + size])
        start += size
    dataset.splits = out
    return dataset


def _tensor_items(ds: Dataset) -> list[tuple[str, np.ndarray]]:
    items = [("inputs", ds.inputs), ("targets", ds.targets)]
    items += [(k, np.ascontiguousarray(ds.extras[k], dtype=np.float32))
              for k in sorted(ds.extras)]
    return items


def save_dataset(ds: Dataset, directory) -> None:
    """Write manifest.json + arrays.bin (float32 LE, per-tensor CRC-32)."""
    os.makedirs(directory, exist_ok=True)
    records = []
    offset = 0
    with open(os.path.join(directory, "arrays.bin"), "wb") as fh:
        for name, arr in _tensor_items(ds):
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(blob)
            records.append({"name": name, "shape": list(arr.shape), "offset": offset,
                            "crc32": zlib.crc32(blob) & 0xFFFFFFFF})
            offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "experiment": ds.experiment,
        "n_samples": ds.n,
        "input_dim": ds.input_dim,
        "output_dims": list(ds.output_dims),
        "log_targets": ds.log_targets,
        "generator": ds.generator,
        "splits": {k: v.tolist() for k, v in ds.splits.items()},
        "tensors": records,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def read_manifest(directory) -> dict:
    """Manifest alone; answers shape and provenance questions without array IO."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise DatasetFormatError(f"no manifest.json under {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format version {manifest.get('format_version')} "
            f"(expected {FORMAT_VERSION})")
    return manifest


def load_dataset(directory) -> Dataset:
    """Reload a saved dataset, verifying every tensor checksum."""
    manifest = read_manifest(directory)
    with open(os.path.join(directory, "arrays.bin"), "rb") as fh:
        blob = fh.read()
    tensors = {}
    for rec in manifest["tensors"]:
        count = int(np.prod(rec["shape"]))
        start = rec["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise DatasetFormatError(f"tensor {rec['name']!r} extends past arrays.bin")
        chunk = blob[start:end]
        if (zlib.crc32(chunk) & 0xFFFFFFFF) != rec["crc32"]:
            raise DatasetFormatError(f"checksum mismatch for tensor {rec['name']!r}")
        tensors[rec["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(rec["shape"]).copy()
    for required in ("inputs", "targets"):
        if required not in tensors:
            raise DatasetFormatError(f"dataset is missing the {required!r} tensor")
    extras = {k: v for k, v in tensors.items() if k not in ("inputs", "targets")}
    ds = Dataset(manifest["experiment"], tensors["inputs"], tensors["targets"],
                 tuple(manifest["output_dims"]), manifest["log_targets"],
                 manifest["generator"], extras=extras)
    ds.splits = {k: np.asarray(v, dtype=int) for k, v in manifest["splits"].items()}
    return ds
