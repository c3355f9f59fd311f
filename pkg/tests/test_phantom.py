"""Materials, voxel grids, slab geometry, beams, and input sampling."""

import numpy as np
import pytest
from numpy.random import default_rng

from protodose.errors import ConfigError, GeometryError, OutOfDomainError
from protodose.phantom import (BONE, WATER, BeamSpec, InputDistribution,
                               Material, Phantom, VoxelGrid,
                               build_homogeneous_phantom, build_slab_phantom,
                               direction_from_angle, sample_inputs)


class TestMaterial:
    def test_builtin_constants(self):
        assert WATER.rho == 1.0
        assert WATER.relative_stopping == 1.0
        assert BONE.rho == 1.85
        assert BONE.relative_stopping == 1.6
        assert BONE.x0 < WATER.x0

    def test_rejects_nonpositive_properties(self):
        with pytest.raises(ConfigError):
            Material("void", rho=0.0, relative_stopping=1.0, x0=30.0)
        with pytest.raises(ConfigError):
            Material("odd", rho=1.0, relative_stopping=-2.0, x0=30.0)
        with pytest.raises(ConfigError):
            Material("flat", rho=1.0, relative_stopping=1.0, x0=float("nan"))


class TestVoxelGrid:
    def test_edges_and_centers(self):
        g = VoxelGrid((4,), (0.0,), (2.0,))
        np.testing.assert_allclose(g.edges(0), [0.0, 0.5, 1.0, 1.5, 2.0])
        np.testing.assert_allclose(g.centers(0), [0.25, 0.75, 1.25, 1.75])

    def test_voxel_volume_and_count(self):
        g = VoxelGrid((4, 2, 5), (0.0, 0.0, 0.0), (2.0, 1.0, 10.0))
        np.testing.assert_allclose(g.voxel_volume, 0.5 * 0.5 * 2.0)
        assert g.n_voxels == 40
        assert g.ndim == 3

    def test_locate_interior_point(self):
        g = VoxelGrid((4,), (0.0,), (2.0,))
        assert g.locate([0.6]) == (1,)

    def test_locate_faces(self):
        """Interior faces belong to the lower-index voxel, boundaries clamp."""
        g = VoxelGrid((4,), (0.0,), (2.0,))
        assert g.locate([0.5]) == (0,)
        assert g.locate([1.5]) == (2,)
        assert g.locate([0.0]) == (0,)
        assert g.locate([2.0]) == (3,)

    def test_locate_outside_raises(self):
        g = VoxelGrid((4,), (0.0,), (2.0,))
        with pytest.raises(OutOfDomainError):
            g.locate([-0.1])
        with pytest.raises(OutOfDomainError):
            g.locate([2.1])

    def test_drop_axis(self):
        g = VoxelGrid((4, 2, 3), (0.0, -1.0, -2.0), (2.0, 1.0, 2.0))
        gz = g.drop_axis(2)
        assert gz.dims == (4, 2)
        assert gz.lo == (0.0, -1.0)
        assert gz.hi == (2.0, 1.0)

    def test_invalid_grids_raise(self):
        with pytest.raises(ConfigError):
            VoxelGrid((4,), (1.0,), (1.0,))
        with pytest.raises(ConfigError):
            VoxelGrid((0,), (0.0,), (1.0,))
        with pytest.raises(ConfigError):
            VoxelGrid((4, 4), (0.0,), (1.0,))
        with pytest.raises(ConfigError):
            VoxelGrid((2, 2, 2, 2), (0.0,) * 4, (1.0,) * 4)


class TestPhantom:
    def test_material_lookup(self):
        g = VoxelGrid((2, 1, 1), (0.0, 0.0, 0.0), (2.0, 1.0, 1.0))
        mm = np.array([[[0]], [[1]]], dtype=np.int16)
        ph = Phantom(g, mm, (WATER, BONE))
        assert ph.material_at([0.5, 0.5, 0.5]) is WATER
        assert ph.material_at([1.5, 0.5, 0.5]) is BONE

    def test_property_maps_align_with_ravel(self):
        g = VoxelGrid((2, 1, 1), (0.0, 0.0, 0.0), (2.0, 1.0, 1.0))
        ph = Phantom(g, np.array([[[1]], [[0]]], dtype=np.int16), (WATER, BONE))
        rho, rel, x0 = ph.property_maps()
        np.testing.assert_allclose(rho, [1.85, 1.0])
        np.testing.assert_allclose(rel, [1.6, 1.0])
        np.testing.assert_allclose(x0, [16.8, 36.08])

    def test_shape_mismatch_raises(self):
        g = VoxelGrid((2, 1, 1), (0.0, 0.0, 0.0), (2.0, 1.0, 1.0))
        with pytest.raises(GeometryError):
            Phantom(g, np.zeros((3, 1, 1), dtype=np.int16), (WATER,))

    def test_index_out_of_table_raises(self):
        g = VoxelGrid((2, 1, 1), (0.0, 0.0, 0.0), (2.0, 1.0, 1.0))
        with pytest.raises(GeometryError):
            Phantom(g, np.full((2, 1, 1), 3, dtype=np.int16), (WATER, BONE))

    def test_homogeneous_builder(self):
        g = VoxelGrid((3, 2, 2), (0.0, 0.0, 0.0), (3.0, 2.0, 2.0))
        ph = build_homogeneous_phantom(BONE, g)
        assert np.all(ph.material_map == 0)
        assert ph.materials == (BONE,)


class TestSlabPhantom:
    def test_nominal_slab_interval(self):
        """Zero offsets put bone at x-centres inside (-2.5, 2.5)."""
        g = VoxelGrid((300, 4, 1), (-7.5, -5.0, -5.0), (7.5, 5.0, 5.0))
        ph = build_slab_phantom(0.0, 0.0, g)
        cx = g.centers(0)
        in_slab = ph.material_map[:, 0, 0] == 1
        np.testing.assert_array_equal(in_slab, (cx > -2.5) & (cx < 2.5))

    def test_shift_and_halfwidth_perturbations(self):
        """x1 moves the centre, x2 widens each side by the same amount."""
        g = VoxelGrid((300, 4, 1), (-7.5, -5.0, -5.0), (7.5, 5.0, 5.0))
        ph = build_slab_phantom(1.0, 0.5, g)
        cx = g.centers(0)
        in_slab = ph.material_map[:, 0, 0] == 1
        np.testing.assert_array_equal(in_slab, (cx > -2.0) & (cx < 4.0))

    def test_degenerate_slab_raises(self):
        g = VoxelGrid((300, 4, 1), (-7.5, -5.0, -5.0), (7.5, 5.0, 5.0))
        with pytest.raises(GeometryError):
            build_slab_phantom(0.0, -2.5, g)

    def test_slab_leaving_grid_raises(self):
        g = VoxelGrid((300, 4, 1), (-7.5, -5.0, -5.0), (7.5, 5.0, 5.0))
        with pytest.raises(GeometryError):
            build_slab_phantom(6.0, 0.0, g)


class TestBeamSpec:
    def test_direction_from_angle(self):
        np.testing.assert_allclose(direction_from_angle(np.pi), (-1.0, 0.0, 0.0),
                                   atol=1e-15)
        np.testing.assert_allclose(direction_from_angle(0.0), (1.0, 0.0, 0.0))

    def test_non_unit_direction_raises(self):
        with pytest.raises(ConfigError):
            BeamSpec((0.0, 0.0, 0.0), (1.0, 1.0, 0.0), 100.0)

    def test_negative_spread_raises(self):
        with pytest.raises(ConfigError):
            BeamSpec((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 100.0, energy_sigma=-1.0)

    def test_nonpositive_energy_raises(self):
        with pytest.raises(ConfigError):
            BeamSpec((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.0)


class TestInputDistribution:
    def test_default_names_and_dim(self):
        d = InputDistribution(np.zeros(3), np.ones(3))
        assert d.names == ("x1", "x2", "x3")
        assert d.dim == 3

    def test_shifted_moves_means_only(self):
        d = InputDistribution(np.array([1.0, 2.0]), np.array([0.5, 0.0]))
        s = d.shifted(-2.0)
        np.testing.assert_allclose(s.mean, [0.0, 2.0])
        np.testing.assert_allclose(s.sigma, d.sigma)

    def test_dict_roundtrip_preserves_lower(self):
        d = InputDistribution(np.array([1.0, 2.0]), np.array([0.5, 0.1]),
                              names=("a", "b"),
                              lower=np.array([-np.inf, 0.5]))
        back = InputDistribution.from_dict(d.to_dict())
        np.testing.assert_allclose(back.mean, d.mean)
        np.testing.assert_allclose(back.sigma, d.sigma)
        assert back.names == d.names
        np.testing.assert_array_equal(back.lower, d.lower)

    def test_negative_sigma_raises(self):
        with pytest.raises(ConfigError):
            InputDistribution(np.zeros(2), np.array([1.0, -0.1]))

    def test_sampling_is_deterministic(self):
        d = InputDistribution(np.zeros(3), np.ones(3))
        a = sample_inputs(d, 10, 42)
        b = sample_inputs(d, 10, 42)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (10, 3)

    def test_sampling_respects_floors(self):
        d = InputDistribution(np.zeros(2), np.ones(2),
                              lower=np.array([0.5, -np.inf]))
        x = sample_inputs(d, 500, default_rng(42))
        assert x[:, 0].min() >= 0.5
        assert x[:, 1].min() < 0.0

    def test_sampling_moments(self):
        d = InputDistribution(np.array([2.0, -1.0]), np.array([0.3, 0.0]))
        x = sample_inputs(d, 4000, default_rng(42))
        np.testing.assert_allclose(x.mean(axis=0), [2.0, -1.0], atol=0.02)
        np.testing.assert_allclose(x[:, 0].std(), 0.3, atol=0.02)
        np.testing.assert_array_equal(x[:, 1], -1.0)

    def test_count_below_one_raises(self):
        d = InputDistribution(np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            sample_inputs(d, 0, 42)
