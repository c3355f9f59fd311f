"""Tests for dataset generation, persistence, and splitting."""

import json
import os

import numpy as np
import pytest

from protodose import datasets
from protodose.analytic1d import BraggKleemanParams, depth_dose_spectrum
from protodose.errors import ConfigError, DatasetFormatError
from protodose.mctransport import TransportConfig
from protodose.phantom import InputDistribution, VoxelGrid, direction_from_angle

from conftest import BRAGG_LOWER, BRAGG_MEAN, BRAGG_SIGMA

# Slab grid: 15 cm along the beam axis so the nominal 5 cm slab sits strictly
# inside, one voxel thick in z as the projection step expects.
SLAB_GRID = VoxelGrid((30, 6, 1), (-7.5, -2.5, -0.5), (7.5, 2.5, 0.5))

# 60 MeV protons stop after ~3.2 cm of water, keeping MC-backed tests cheap.
CHEAP_ENERGY = 60.0


def _bragg_dataset(n=12, seed=3):
    dist = InputDistribution(BRAGG_MEAN, BRAGG_SIGMA, lower=BRAGG_LOWER)
    grid = VoxelGrid((80,), (0.0,), (20.0,))
    return datasets.generate_1d(n, dist, grid, 3.0, 16, seed=seed)


def _slab_dataset(n=2, seed=5):
    dist = InputDistribution((0.0, 0.0), (0.3, 0.1))
    return datasets.generate_2d(n, dist, SLAB_GRID, histories=64, seed=seed,
                                nominal_energy=CHEAP_ENERGY, energy_sigma=0.5)


class TestGenerate1d:
    def test_shapes_and_dtypes(self):
        ds = _bragg_dataset()
        assert ds.inputs.shape == (12, 4)
        assert ds.targets.shape == (12, 80)
        assert ds.inputs.dtype == np.float32
        assert ds.targets.dtype == np.float32
        assert ds.output_dims == (80,)
        assert not ds.log_targets
        assert ds.experiment == "bragg1d"

    def test_range_extra_is_physical(self):
        ds = _bragg_dataset()
        r = ds.extras["range_cm"]
        assert r.shape == (12,)
        assert np.all(r > 0)
        assert np.all(r < 20.0)

    def test_generator_record(self):
        ds = _bragg_dataset(seed=9)
        g = ds.generator
        assert g["name"] == "bragg1d"
        assert g["seed"] == 9
        assert g["grid"]["dims"] == [80]
        assert g["nodes"] == 16
        assert g["spectrum_variance"] == 3.0

    def test_target_row_matches_direct_curve(self):
        ds = _bragg_dataset(n=3)
        grid = datasets.grid_from_dict(ds.generator["grid"])
        params = BraggKleemanParams(*ds.inputs[1].astype(float))
        curve = depth_dose_spectrum(params, grid.edges(0), 3.0, 16)
        np.testing.assert_allclose(ds.targets[1], curve.dose, rtol=2e-5)

    def test_wrong_input_dim_rejected(self):
        dist = InputDistribution((1.0, 2.0), (0.1, 0.1))
        with pytest.raises(ConfigError):
            datasets.generate_1d(4, dist, VoxelGrid((10,), (0.0,), (20.0,)))

    def test_needs_1d_grid(self):
        dist = InputDistribution(BRAGG_MEAN, BRAGG_SIGMA, lower=BRAGG_LOWER)
        with pytest.raises(ConfigError):
            datasets.generate_1d(4, dist, SLAB_GRID)


class TestSlabScene:
    def test_nominal_geometry(self):
        ph, beam = datasets.slab_scene((0.0, 0.0), SLAB_GRID)
        np.testing.assert_allclose(beam.entry, (7.5, 0.0, 0.0))
        np.testing.assert_allclose(beam.direction, (-1.0, 0.0, 0.0), atol=1e-12)
        assert beam.energy_mean == 150.0
        cx = SLAB_GRID.centers(0)
        inside = (cx > -2.5) & (cx < 2.5)
        np.testing.assert_array_equal(ph.material_map[:, 0, 0] == 1, inside)

    def test_four_component_steering(self):
        ph, beam = datasets.slab_scene((0.5, 0.25, 0.1, -5.0), SLAB_GRID)
        np.testing.assert_allclose(beam.direction,
                                   direction_from_angle(np.pi + 0.1))
        assert beam.energy_mean == 145.0
        cx = SLAB_GRID.centers(0)
        inside = (cx > -2.25) & (cx < 3.25)
        np.testing.assert_array_equal(ph.material_map[:, 0, 0] == 1, inside)

    def test_nonpositive_energy_rejected(self):
        with pytest.raises(ConfigError):
            datasets.slab_scene((0.0, 0.0, 0.0, -200.0), SLAB_GRID)

    def test_wrong_component_count_rejected(self):
        with pytest.raises(ConfigError):
            datasets.slab_scene((0.0, 0.0, 0.0), SLAB_GRID)


class TestGenerate2d:
    def test_shapes_and_log_flag(self):
        ds = _slab_dataset()
        assert ds.inputs.shape == (2, 2)
        assert ds.targets.shape == (2, 30 * 6)
        assert ds.output_dims == (30, 6)
        assert ds.log_targets
        assert np.all(ds.targets >= -10.0)
        assert np.all(ds.targets < 3.0)

    def test_generator_records_transport(self):
        ds = _slab_dataset()
        g = ds.generator
        assert g["name"] == "slab2d"
        assert g["histories"] == 64
        assert g["transport"]["step_cm"] == TransportConfig().step_cm
        assert g["nominal_energy"] == CHEAP_ENERGY

    def test_needs_3d_grid(self):
        dist = InputDistribution((0.0, 0.0), (0.3, 0.1))
        with pytest.raises(ConfigError):
            datasets.generate_2d(2, dist, VoxelGrid((10,), (0.0,), (20.0,)),
                                 histories=16)


class TestBeam3dScene:
    def test_entry_on_top_face(self):
        grid = VoxelGrid((8, 8, 8), (-4.0, -4.0, -4.0), (4.0, 4.0, 4.0))
        ph, beam = datasets.beam3d_scene((0.4, -0.3), grid, energy_mean=60.0)
        np.testing.assert_allclose(beam.entry, (0.4, -0.3, 4.0))
        np.testing.assert_allclose(beam.direction, (0.0, 0.0, -1.0))
        assert beam.energy_mean == 60.0
        assert np.all(ph.material_map == 0)

    def test_wrong_component_count_rejected(self):
        grid = VoxelGrid((8, 8, 8), (-4.0, -4.0, -4.0), (4.0, 4.0, 4.0))
        with pytest.raises(ConfigError):
            datasets.beam3d_scene((0.0,), grid)


class TestGenerate3d:
    def test_tiny_smoke(self):
        grid = VoxelGrid((8, 8, 8), (-4.0, -4.0, -4.0), (4.0, 4.0, 4.0))
        dist = InputDistribution((0.0, 0.0), (0.5, 0.5))
        ds = datasets.generate_3d(1, dist, grid, histories=64, seed=4,
                                  energy_mean=CHEAP_ENERGY, energy_sigma=0.5,
                                  spatial_sigma=0.2)
        assert ds.targets.shape == (1, 512)
        assert ds.output_dims == (8, 8, 8)
        assert ds.log_targets
        assert np.any(ds.targets > -10.0)


class TestRegenerateSample:
    """Every stored row must be recomputable from the provenance record."""

    def test_bragg_rows_bitwise(self):
        ds = _bragg_dataset(n=6, seed=21)
        for i in (0, 3, 5):
            x, row = datasets.regenerate_sample(ds.generator, i)
            np.testing.assert_array_equal(x.astype(np.float32), ds.inputs[i])
            np.testing.assert_array_equal(row, ds.targets[i])

    def test_slab_row_bitwise(self):
        ds = _slab_dataset(seed=13)
        x, row = datasets.regenerate_sample(ds.generator, 1)
        np.testing.assert_array_equal(x.astype(np.float32), ds.inputs[1])
        np.testing.assert_array_equal(row, ds.targets[1])

    def test_unknown_generator_rejected(self):
        with pytest.raises(DatasetFormatError):
            datasets.regenerate_sample({"name": "volumetric", "seed": 0,
                                        "dist": {"mean": [0.0], "sigma": [1.0]},
                                        "grid": {"dims": [4], "lo": [0.0],
                                                 "hi": [1.0]},
                                        "transport": {}}, 0)


class TestSplit:
    def test_exact_sizes_largest_remainder(self):
        ds = _bragg_dataset(n=7)
        datasets.split(ds, {"a": 0.5, "b": 0.25, "c": 0.25}, seed=1)
        # raw sizes (3.5, 1.75, 1.75): the two 0.75 remainders round up first.
        assert {k: v.size for k, v in ds.splits.items()} == {"a": 3, "b": 2, "c": 2}

    def test_partition_is_disjoint_and_complete(self):
        ds = _bragg_dataset(n=12)
        datasets.split(ds, {"train": 0.75, "val": 0.25}, seed=2)
        merged = np.concatenate([ds.splits["train"], ds.splits["val"]])
        np.testing.assert_array_equal(np.sort(merged), np.arange(12))
        assert np.all(np.diff(ds.splits["train"]) > 0)

    def test_deterministic_per_seed(self):
        a = datasets.split(_bragg_dataset(n=12), {"train": 0.5, "val": 0.5}, seed=8)
        b = datasets.split(_bragg_dataset(n=12), {"train": 0.5, "val": 0.5}, seed=8)
        c = datasets.split(_bragg_dataset(n=12), {"train": 0.5, "val": 0.5}, seed=9)
        np.testing.assert_array_equal(a.splits["train"], b.splits["train"])
        assert not np.array_equal(a.splits["train"], c.splits["train"])

    def test_fractions_validated(self):
        ds = _bragg_dataset(n=4)
        with pytest.raises(ConfigError):
            datasets.split(ds, {"a": 0.7, "b": 0.7})
        with pytest.raises(ConfigError):
            datasets.split(ds, {"a": 1.5, "b": -0.5})

    def test_subset_access(self):
        ds = _bragg_dataset(n=8)
        datasets.split(ds, {"train": 0.75, "val": 0.25}, seed=3)
        xs, ys = ds.subset("train")
        assert xs.shape == (6, 4)
        assert ys.shape == (6, 80)
        r = ds.subset_extra("range_cm", "val")
        assert r.shape == (2,)
        with pytest.raises(DatasetFormatError):
            ds.subset("test")

    def test_empty_split_flagged_on_use(self):
        ds = _bragg_dataset(n=4)
        datasets.split(ds, {"train": 1.0, "val": 0.0}, seed=0)
        with pytest.raises(DatasetFormatError):
            ds.subset("val")
        xs, _ = ds.subset("val", require_nonempty=False)
        assert xs.shape == (0, 4)


class TestPersistence:
    def test_roundtrip_exact(self, tmp_path):
        ds = _bragg_dataset(n=10, seed=17)
        datasets.split(ds, {"train": 0.8, "val": 0.2}, seed=17)
        datasets.save_dataset(ds, tmp_path / "ds")
        back = datasets.load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.targets, ds.targets)
        np.testing.assert_array_equal(back.extras["range_cm"], ds.extras["range_cm"])
        np.testing.assert_array_equal(back.splits["train"], ds.splits["train"])
        assert back.generator == ds.generator
        assert back.output_dims == ds.output_dims
        assert back.log_targets == ds.log_targets

    def test_manifest_answers_without_arrays(self, tmp_path):
        ds = _bragg_dataset(n=5)
        datasets.save_dataset(ds, tmp_path / "ds")
        os.remove(tmp_path / "ds" / "arrays.bin")
        m = datasets.read_manifest(tmp_path / "ds")
        assert m["n_samples"] == 5
        assert m["output_dims"] == [80]
        assert m["generator"]["name"] == "bragg1d"

    def test_corrupt_byte_detected(self, tmp_path):
        ds = _bragg_dataset(n=5)
        datasets.save_dataset(ds, tmp_path / "ds")
        path = tmp_path / "ds" / "arrays.bin"
        blob = bytearray(path.read_bytes())
        blob[40] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetFormatError, match="checksum"):
            datasets.load_dataset(tmp_path / "ds")

    def test_truncation_detected(self, tmp_path):
        ds = _bragg_dataset(n=5)
        datasets.save_dataset(ds, tmp_path / "ds")
        path = tmp_path / "ds" / "arrays.bin"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DatasetFormatError):
            datasets.load_dataset(tmp_path / "ds")

    def test_format_version_checked(self, tmp_path):
        ds = _bragg_dataset(n=5)
        datasets.save_dataset(ds, tmp_path / "ds")
        mpath = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["format_version"] = 99
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(DatasetFormatError, match="version"):
            datasets.read_manifest(tmp_path / "ds")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            datasets.read_manifest(tmp_path)


class TestDatasetValidation:
    def test_row_count_mismatch(self):
        with pytest.raises(DatasetFormatError):
            datasets.Dataset("x", np.zeros((3, 2)), np.zeros((4, 5)), (5,),
                             False, {})

    def test_output_dims_mismatch(self):
        with pytest.raises(DatasetFormatError):
            datasets.Dataset("x", np.zeros((3, 2)), np.zeros((3, 5)), (2, 3),
                             False, {})

    def test_grid_dict_roundtrip(self):
        g = VoxelGrid((4, 5, 6), (-1.0, 0.0, 2.0), (1.0, 5.0, 8.0))
        back = datasets.grid_from_dict(datasets.grid_to_dict(g))
        assert back.dims == g.dims
        assert back.lo == g.lo
        assert back.hi == g.hi
