"""End-to-end behaviour gates, one test per criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get a single pass/fail
line per criterion.  Tolerances and budgets are stated inline; every
randomised check uses a fixed seed so a pass is reproducible.
"""

import math
import time

import numpy as np
from numpy.random import SeedSequence, default_rng

from protodose import datasets, nn, uq
from protodose.analytic1d import (BraggKleemanParams, DoseCurve, csda_range,
                                  depth_dose_spectrum, distal_edge,
                                  spectrum_energies)
from protodose.cli import presets
from protodose.cli.experiments import (_bragg_dist, _depth_grid, _train_1d,
                                       run_experiment)
from protodose.cli.presets import resolve_config
from protodose.mctransport import estimate_dose
from protodose.phantom import (WATER, BeamSpec, InputDistribution, VoxelGrid,
                               build_homogeneous_phantom, build_slab_phantom,
                               direction_from_angle, sample_inputs)
from protodose.seeding import child_seed

ALPHA_WATER = 0.00246   # cm MeV^-p
P_WATER = 1.75          # dimensionless range-energy exponent
STRAGGLING_COEFF = 0.087  # MeV^2 / cm in unit-density water


def _check(report, name):
    match = [c for c in report.checks if c["name"] == name]
    assert match, f"run recorded no check named {name!r}"
    return match[0]


def test_c01_energy_conservation_across_parameter_box():
    """Deposited energy equals the mean spectrum energy for random media."""
    start = time.perf_counter()
    rng = default_rng(42)
    for _ in range(100):
        params = BraggKleemanParams(rng.uniform(0.001, 0.005),
                                    rng.uniform(1.3, 2.2),
                                    rng.uniform(0.3, 3.0),
                                    rng.uniform(50.0, 250.0))
        energies = spectrum_energies(params.e_peak, 3.0, 32)
        r_max = params.alpha * energies.max() ** params.p
        edges = np.linspace(0.0, r_max * 1.05, 500)
        curve = depth_dose_spectrum(params, edges, 3.0, nodes=32)
        np.testing.assert_allclose(curve.dose.sum() * params.rho,
                                   energies.mean(), rtol=1e-10)
    assert time.perf_counter() - start < 1.0


def test_c02_range_at_130mev_against_independent_oracle():
    """csda_range agrees with a pow-free log/exp evaluation and 12.31 cm."""
    r = csda_range(ALPHA_WATER, P_WATER, 130.0)
    oracle = ALPHA_WATER * math.exp(P_WATER * math.log(130.0))
    np.testing.assert_allclose(r, oracle, rtol=1e-12)
    assert abs(r - 12.31) <= 0.01


def test_c03_gradients_match_finite_differences():
    """Analytic gradients track central differences over 50 random nets."""
    start = time.perf_counter()
    rng = default_rng(42)
    h = 1e-5
    worst = 0.0
    for _ in range(50):
        cfg = nn.MLPConfig(int(rng.integers(1, 4)), int(rng.integers(2, 9)),
                           int(rng.integers(0, 3)), int(rng.integers(0, 3)),
                           int(rng.integers(1, 4)),
                           p_drop=float(rng.uniform(0.05, 0.5)))
        params = nn.init_params(cfg, rng)
        # biases away from zero keep masked units off the ReLU kink
        for b in params.biases:
            b[:] = 0.3 * rng.standard_normal(b.size) + 0.1
        X = rng.standard_normal((3, cfg.n_in))
        D = rng.standard_normal((3, cfg.n_out))
        masks = nn.draw_masks(cfg, rng)
        (dW, db), _ = nn.gradients(params, cfg, X, D, masks)
        for li in range(len(params.weights)):
            for theta, grad in ((params.weights[li], dW[li]),
                                (params.biases[li], db[li])):
                flat = theta.ravel()
                g = np.asarray(grad).ravel()
                for j in range(flat.size):
                    keep = flat[j]
                    flat[j] = keep + h
                    up = nn.loss(params, cfg, X, D, masks)
                    flat[j] = keep - h
                    down = nn.loss(params, cfg, X, D, masks)
                    flat[j] = keep
                    fd = (up - down) / (2 * h)
                    denom = max(abs(g[j]), abs(fd), 1e-6)
                    worst = max(worst, abs(g[j] - fd) / denom)
    assert worst <= 1e-4, f"worst relative gradient error {worst:.3e}"
    assert time.perf_counter() - start < 30.0


def test_c04_dropout_zero_p_identity_and_mask_rate():
    """p=0 sampling equals the deterministic forward; masks drop at rate p."""
    cfg = nn.MLPConfig(3, 32, 1, 2, 4, p_drop=0.0)
    params = nn.init_params(cfg, default_rng(42))
    xrng = default_rng(1)
    for k in range(5):
        x = xrng.standard_normal(3)
        det = nn.forward(params, cfg, x)
        sto = nn.forward(params, cfg, x, rng=default_rng(7 + k))
        assert np.abs(det - sto).max() <= 1e-12

    mrng = default_rng(42)
    masks = np.stack([nn.sample_mask(512, 0.05, mrng) for _ in range(10000)])
    frac = float((masks == 0).mean())
    assert abs(frac - 0.05) <= 0.002, f"zero fraction {frac:.5f}"


def test_c05_variance_decomposition_identity_and_pooled_gap():
    """Epistemic + parametric reproduce the pooled table variance closely."""
    worst = 0.0
    for t in range(100):
        trng = default_rng(SeedSequence([977, t]))
        width = int(trng.integers(64, 129))
        p_drop = float(trng.uniform(0.001, 0.005))
        cfg = nn.MLPConfig(3, width, 1, 1, 6, p_drop=p_drop)
        params = nn.init_params(cfg, trng)
        model = uq.Surrogate(params, cfg, np.zeros(3), np.ones(3), {})
        dist = InputDistribution(trng.normal(0, 1, 3), trng.uniform(2, 4, 3))
        seed = int(trng.integers(0, 2 ** 31))
        dec = uq.decompose(model, dist, 4, 3, seed)
        np.testing.assert_array_equal(dec.total,
                                      dec.epistemic + dec.parametric)
        children = SeedSequence([seed]).spawn(5)
        xs = sample_inputs(dist, 4, default_rng(children[0]))
        table = np.concatenate([model.ensemble(xs[s], 3,
                                               default_rng(children[s + 1]))
                                for s in range(4)], axis=0)
        pooled = table.var(axis=0, ddof=1)
        gap = abs(dec.total.sum() - pooled.sum()) / pooled.sum()
        worst = max(worst, gap)
        assert gap <= 0.25, f"trial {t}: summed-variance gap {gap:.4f}"


def test_c06_mc_variance_scales_inversely_with_histories():
    """Per-voxel variance of the dose mean falls like 1/N."""
    start = time.perf_counter()
    grid = VoxelGrid((300, 40, 1), (-7.5, -5.0, -5.0), (7.5, 5.0, 5.0))
    ph = build_homogeneous_phantom(WATER, grid)
    beam = BeamSpec((7.5, 0.0, 0.0), direction_from_angle(np.pi), 150.0,
                    energy_sigma=1.0)
    ns = (1000, 2000, 4000, 8000)
    fields = [estimate_dose(ph, beam, n, seed=child_seed(42, 6, i))
              for i, n in enumerate(ns)]
    region = fields[-1].values > 0.01 * fields[-1].values.max()
    mean_var = [f.variance[region].mean() for f in fields]
    slope = np.polyfit(np.log10(ns), np.log10(mean_var), 1)[0]
    assert abs(slope + 1.0) <= 0.15, f"variance slope {slope:.4f}"
    assert time.perf_counter() - start < 180.0


def test_c07_peak_depth_matches_range_and_bone_shortens():
    """Stochastic peak sits within 2 straggling sigmas of the 150 MeV range."""
    r150 = csda_range(ALPHA_WATER, P_WATER, 150.0)
    z = np.linspace(0.0, r150 * (1 - 1e-9), 20000)
    energy = ((r150 - z) / ALPHA_WATER) ** (1 / P_WATER)
    stop_power = energy ** (1 - P_WATER) / (P_WATER * ALPHA_WATER)
    sigma_r = float(np.sqrt(np.trapezoid(STRAGGLING_COEFF / stop_power ** 2, z)))

    grid = VoxelGrid((360, 9, 9), (-9.0, -1.5, -1.5), (9.0, 1.5, 1.5))
    water = build_homogeneous_phantom(WATER, grid)
    bone = build_slab_phantom(0.0, 0.0, grid)
    beam = BeamSpec((9.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 150.0)
    f_water = estimate_dose(water, beam, 20000, seed=child_seed(42, 7, 0))
    f_bone = estimate_dose(bone, beam, 20000, seed=child_seed(42, 7, 1))

    depth = 9.0 - grid.centers(0)[::-1]
    prof_water = f_water.values.sum(axis=(1, 2))[::-1]
    prof_bone = f_bone.values.sum(axis=(1, 2))[::-1]
    peak = depth[np.argmax(prof_water)]
    assert abs(peak - r150) <= 2 * sigma_r, (
        f"peak {peak:.3f} cm vs range {r150:.3f} cm "
        f"(2 sigma = {2 * sigma_r:.3f} cm)")
    edge_water = distal_edge(DoseCurve(depth, prof_water))
    edge_bone = distal_edge(DoseCurve(depth, prof_bone))
    assert edge_bone < edge_water, (
        f"bone edge {edge_bone:.3f} cm not shorter than water {edge_water:.3f}")


def test_c08_depth_dose_training_pipeline(tmp_path):
    """Training on 200 analytic curves reaches 5% proximal accuracy."""
    start = time.perf_counter()
    report = run_experiment(resolve_config("e1", "desk", tmp_path / "run", 0))
    assert _check(report, "proximal_rel_err_below_5pct")["passed"], \
        _check(report, "proximal_rel_err_below_5pct")["detail"]
    assert _check(report, "shape_loss_drop_10x")["passed"], \
        _check(report, "shape_loss_drop_10x")["detail"]
    assert time.perf_counter() - start < 300.0


def test_c09_ensemble_mean_se_scales_like_inverse_sqrt_passes():
    """Standard error of the dropout-ensemble mean follows T^-1/2."""
    cfg = nn.MLPConfig(3, 64, 1, 2, 4, p_drop=0.2)
    model = uq.Surrogate(nn.init_params(cfg, default_rng(42)), cfg,
                         np.zeros(3), np.ones(3))
    x = np.array([0.3, -0.2, 0.5])
    ts = (10, 100, 1000)
    se = []
    for i, t in enumerate(ts):
        means = np.stack([uq.dropout_ensemble(model, x, t,
                                              child_seed(42, 9, i, r)).mean
                          for r in range(16)])
        se.append(means.std(axis=0, ddof=1).mean())
    slope = np.polyfit(np.log10(ts), np.log10(se), 1)[0]
    assert abs(slope + 0.5) <= 0.1, f"standard-error slope {slope:.4f}"


def test_c10_range_variance_inflates_out_of_distribution():
    """Epistemic variance of range predictions grows 2 sigma off-distribution."""
    p = presets.preset("e1", "desk")
    dist = _bragg_dist(p)
    ds = datasets.generate_1d(p["n_train"], dist, _depth_grid(p),
                              p["spectrum_variance"], p["spectrum_nodes"],
                              seed=101)
    kappas = []
    for s in range(5):
        model, _ = _train_1d(ds, dist, p, task="range", width=p["width"],
                             n_hidden=p["n_hidden"], n_dropout=p["n_dropout"],
                             p_drop=p["p_drop"], epochs=p["epochs"],
                             seed=int(child_seed(42, 10, s).generate_state(1)[0]))
        kappas.append(uq.variance_inflation(model, [0], dist,
                                            dist.shifted(-2.0), 16, 64,
                                            child_seed(42, 10, 100 + s)))
    mean_kappa = float(np.mean(kappas))
    assert mean_kappa > 1.0, f"mean inflation {mean_kappa:.3f}"


def test_c11_late_dropout_placement_raises_epistemic_variance():
    """Six dropout blocks out-vary a single one under equal parameter budget."""
    p = presets.preset("e4", "desk")
    dist = _bragg_dist(p)
    ds = datasets.generate_1d(p["n_train"], dist, _depth_grid(p),
                              p["spectrum_variance"], p["spectrum_nodes"],
                              seed=102)
    epi = {}
    for pair in ((6, 0), (1, 5)):
        vals = []
        for s in range(3):
            model, _ = _train_1d(
                ds, dist, p, task="shape", width=p["width"],
                n_hidden=pair[1], n_dropout=pair[0], p_drop=0.05,
                epochs=p["epochs"],
                seed=int(child_seed(42, 11, pair[0], s).generate_state(1)[0]))
            st = uq.dropout_ensemble(model, dist.mean, p["t_eval"],
                                     child_seed(42, 11, pair[0], 100 + s))
            vals.append(float(st.variance.mean()))
        epi[pair] = float(np.mean(vals))
    assert epi[(6, 0)] > epi[(1, 5)], (
        f"epistemic variance 6:0 = {epi[(6, 0)]:.3g} "
        f"not above 1:5 = {epi[(1, 5)]:.3g}")


def test_c12_conformal_coverage_and_gaussian_reliability():
    """Conformal intervals cover 90% pairs; known-sigma coverage is honest."""
    rng = default_rng(42)
    A = rng.standard_normal((2, 3))

    class LinearStub:
        def predict(self, x, rng=None):
            return A @ np.asarray(x, dtype=float)

    x_cal = rng.standard_normal((1000, 3))
    y_cal = x_cal @ A.T + 0.3 * rng.standard_normal((1000, 2))
    x_test = rng.standard_normal((1000, 3))
    y_test = x_test @ A.T + 0.3 * rng.standard_normal((1000, 2))
    off = uq.conformal_calibrate(LinearStub(), x_cal, y_cal, 0.1, 4,
                                 child_seed(42, 12, 0))
    hits = np.abs(y_test - x_test @ A.T) <= off.half_width
    assert hits.mean() >= 0.87, f"conformal coverage {hits.mean():.4f}"

    sigma_true = 0.7

    class KnownSigmaStub:
        def ensemble(self, x, passes, rng):
            return np.asarray(x, dtype=float) + sigma_true * \
                rng.standard_normal((passes, np.asarray(x).size))

    X = rng.standard_normal((1000, 4))
    Y = X + sigma_true * rng.standard_normal((1000, 4))
    levels = (0.5, 0.8, 0.9, 0.95)
    rep = uq.coverage(KnownSigmaStub(), X, Y, levels, 256,
                      child_seed(42, 12, 1))
    dev = np.abs(rep.empirical - np.asarray(levels)).max()
    assert dev <= 0.03, f"worst reliability deviation {dev:.4f}"


def test_c13_surrogate_forward_beats_mc_by_100x():
    """One stochastic forward is at least 100x faster than one MC estimate."""
    p = presets.preset("e7", "desk")
    grid = datasets.grid_from_dict({"dims": p["grid_dims"],
                                    "lo": p["grid_lo_cm"],
                                    "hi": p["grid_hi_cm"]})
    ph, beam = datasets.beam3d_scene((0.0, 0.0), grid, p["energy_mean"],
                                     p["energy_sigma"], p["spatial_sigma"],
                                     p["angular_sigma"])
    mc_times = []
    for r in range(2):
        t0 = time.perf_counter()
        estimate_dose(ph, beam, p["histories"], seed=child_seed(42, 13, r))
        mc_times.append(time.perf_counter() - t0)

    cfg = nn.MLPConfig(2, p["width"], p["n_hidden"], p["n_dropout"],
                       grid.n_voxels, p_drop=p["p_drop"],
                       output_floor=p["output_floor"])
    model = uq.Surrogate(nn.init_params(cfg, default_rng(42)), cfg,
                         np.zeros(2), np.ones(2))
    x = np.zeros(2)
    model.predict(x, default_rng(0))
    fwd_times = []
    for r in range(5):
        t0 = time.perf_counter()
        model.predict(x, default_rng(r + 1))
        fwd_times.append(time.perf_counter() - t0)

    mc_s, fwd_s = min(mc_times), min(fwd_times)
    speedup = mc_s / fwd_s
    print(f"MC {mc_s:.3f} s vs forward {fwd_s * 1e3:.3f} ms: "
          f"x{speedup:.0f} measured here; the x12000 figure quoted for "
          f"full-production engines against GPU surrogates is not "
          f"reproducible at this scale")
    assert speedup >= 100.0, f"measured speedup only x{speedup:.0f}"


def test_c14_errors_colocate_with_total_variance(tmp_path):
    """Half of the worst-error pixels carry top-quartile total variance."""
    report = run_experiment(resolve_config("e5", "desk", tmp_path / "run", 0))
    frac = report.metrics["colocation_fraction"]
    assert frac >= 0.5, f"co-location fraction {frac:.3f}"
    assert _check(report, "error_uncertainty_colocation")["passed"], \
        _check(report, "error_uncertainty_colocation")["detail"]
