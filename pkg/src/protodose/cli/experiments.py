"""Runners for the seven packaged experiments.

Each ``run_e*`` function executes stages (datagen, train, evaluate,
plots) against a resolved ExperimentConfig, writes its figures and CSV
twins into the output directory, and returns a RunReport.  Stage
failures raise StageError tagged with the stage name.  Checks that the
run evaluates (convergence slopes, ordering properties and so on) never
raise; they are recorded pass/fail in the report so a finished run
always leaves a complete artifact trail behind.
"""

import dataclasses
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import default_rng

from .. import analytic1d, datasets, mctransport, nn, uq
from ..analytic1d import BraggKleemanParams
from ..errors import ConfigError
from ..phantom import InputDistribution, VoxelGrid
from ..seeding import child_seed
from . import plots
from .presets import ExperimentConfig

SQRT_2PI = 2.5066282746310002


class StageError(RuntimeError):
    """Failure inside a named experiment stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _sub(seed: int, *key) -> int:
    """Derived integer seed for one stage or loop iteration."""
    return int(child_seed(seed, *key).generate_state(1)[0])


@dataclass
class RunReport:
    experiment: str
    scale: str
    seed: int
    params: dict
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    captions: dict = field(default_factory=dict)

    def add_check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    def add_files(self, out_dir: Path, paths, caption: str = "") -> None:
        for p in paths:
            rel = Path(p).relative_to(out_dir).as_posix()
            self.artifacts.append(rel)
            if caption and rel.endswith(".svg"):
                self.captions[rel] = caption

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def finish(self, out_dir: Path) -> Path:
        missing = [a for a in self.artifacts if not (out_dir / a).is_file()]
        if missing:
            raise StageError("report", f"missing artifact(s): {missing}")
        path = out_dir / "report.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(dataclasses.asdict(self)), fh, indent=2)
            fh.write("\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


@contextmanager
def _stage(report: RunReport, name: str):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc
    report.timings[name] = time.perf_counter() - start


def _prepare(cfg: ExperimentConfig) -> tuple[RunReport, Path]:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".writable"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise StageError("setup", f"output directory {out} not writable: {exc}")
    return RunReport(cfg.experiment, cfg.scale, cfg.seed, _jsonable(cfg.params)), out


# ---------------------------------------------------------------------------
# analytic 1-D experiments


def _bragg_dist(p: dict) -> InputDistribution:
    return InputDistribution(np.asarray(p["input_mean"], dtype=float),
                             np.asarray(p["input_sigma"], dtype=float),
                             names=("alpha", "p", "rho", "e_peak"),
                             lower=np.asarray(p["input_lower"], dtype=float))


def _depth_grid(p: dict) -> VoxelGrid:
    return VoxelGrid((int(p["grid_n"]),), (float(p["grid_lo_cm"]),),
                     (float(p["grid_hi_cm"]),))


def _train_1d(ds: datasets.Dataset, dist: InputDistribution, p: dict, *,
              task: str, width: int, n_hidden: int, n_dropout: int,
              p_drop: float, epochs: int, seed: int):
    """Fit one surrogate (shape or range) on an analytic dataset."""
    loc, scale = uq.standardiser_from_dist(dist)
    X = (ds.inputs.astype(float) - loc) / scale
    if task == "shape":
        D = ds.targets.astype(float)
    else:
        D = ds.extras["range_cm"].astype(float)[:, None]
    mcfg = nn.MLPConfig(ds.input_dim, width, n_hidden, n_dropout, D.shape[1],
                        p_drop=p_drop)
    tcfg = nn.TrainConfig(lr=p["lr"], epochs=epochs, batch_size=p["batch_size"],
                          seed=seed, weight_decay=p["weight_decay"])
    params, hist = nn.train(X, D, mcfg, tcfg)
    model = uq.Surrogate(params, mcfg, loc, scale,
                         meta={"task": task, "generator": ds.generator})
    return model, hist


def _proximal_region(centers: np.ndarray, exact_range: float) -> np.ndarray:
    return centers < 0.9 * exact_range


def _mean_rel_err(pred: np.ndarray, ref: np.ndarray, region: np.ndarray) -> float:
    return float(np.mean(np.abs(pred[region] - ref[region]) / ref[region]))


def run_e1(cfg: ExperimentConfig) -> RunReport:
    """1-D analytic benchmark: shape and range surrogates on one dataset."""
    report, out = _prepare(cfg)
    p = cfg.params

    with _stage(report, "datagen"):
        dist = _bragg_dist(p)
        grid = _depth_grid(p)
        ds = datasets.generate_1d(p["n_train"], dist, grid,
                                  p["spectrum_variance"], p["spectrum_nodes"],
                                  seed=_sub(cfg.seed, 1))
        datasets.save_dataset(ds, out / "dataset")
        report.add_files(out, [out / "dataset" / "manifest.json",
                               out / "dataset" / "arrays.bin"])

    with _stage(report, "train"):
        kw = dict(width=p["width"], n_hidden=p["n_hidden"],
                  n_dropout=p["n_dropout"], p_drop=p["p_drop"],
                  epochs=p["epochs"])
        shape_model, shape_hist = _train_1d(ds, dist, p, task="shape",
                                            seed=_sub(cfg.seed, 2), **kw)
        range_model, range_hist = _train_1d(ds, dist, p, task="range",
                                            seed=_sub(cfg.seed, 3), **kw)
        shape_model.save(out / "shape_model")
        range_model.save(out / "range_model")
        for d in ("shape_model", "range_model"):
            report.add_files(out, [out / d / "checkpoint.bin",
                                   out / d / "model.json"])

    with _stage(report, "evaluate"):
        x0 = dist.mean
        ref = analytic1d.depth_dose_spectrum(BraggKleemanParams(*x0),
                                             grid.edges(0),
                                             p["spectrum_variance"],
                                             p["spectrum_nodes"])
        exact_range = analytic1d.distal_edge(ref)
        shape_stats = uq.dropout_ensemble(shape_model, x0, p["t_shape"],
                                          _sub(cfg.seed, 4))
        range_samples = range_model.ensemble(
            x0, p["t_range"], default_rng(child_seed(cfg.seed, 5))).ravel()
        sd = np.sqrt(shape_stats.variance)
        abs_err, norm_err = uq.normalised_error(shape_model, x0, ref.dose,
                                                p["t_shape"], _sub(cfg.seed, 6))
        centers = grid.centers(0)
        region = _proximal_region(centers, exact_range)
        proximal_err = _mean_rel_err(shape_stats.mean, ref.dose, region)

    with _stage(report, "plots"):
        epochs_axis = np.arange(p["epochs"])
        report.add_files(out, plots.line_plot(
            out / "loss_history.svg", epochs_axis,
            [("shape", shape_hist.per_epoch), ("range", range_hist.per_epoch)],
            "epoch", "training loss", logy=True),
            caption="Training loss per epoch for the shape and range surrogates.")
        report.add_files(out, plots.band_plot(
            out / "shape_bands.svg", centers, shape_stats.mean, sd,
            reference=ref.dose),
            caption="Ensemble mean depth-dose with 1 and 2 sd bands against "
                    "the closed-form reference at the nominal input.")
        mu, s = range_samples.mean(), range_samples.std(ddof=1)
        gx = np.linspace(mu - 4 * s, mu + 4 * s, 200)
        gpdf = np.exp(-0.5 * ((gx - mu) / s) ** 2) / (s * SQRT_2PI)
        report.add_files(out, plots.histogram_plot(
            out / "range_histogram.svg", range_samples, 40,
            overlay=(gx, gpdf), vline=exact_range, xlabel="range (cm)"),
            caption="Dropout-sample distribution of the predicted distal edge "
                    "with a gaussian fit and the exact value.")
        report.add_files(out, plots.error_plot(
            out / "error_curves.svg", centers, abs_err, norm_err),
            caption="Pointwise absolute error and sd-normalised error of the "
                    "shape surrogate against the closed-form curve.")

    report.metrics.update({
        "exact_range_cm": exact_range,
        "range_pred_mean_cm": mu,
        "range_pred_sd_cm": s,
        "proximal_mean_rel_err": proximal_err,
        "shape_loss_first": shape_hist.first,
        "shape_loss_final": shape_hist.final,
        "range_loss_first": range_hist.first,
        "range_loss_final": range_hist.final,
        "zero_sd_components": int(np.sum(np.isinf(norm_err))),
    })
    lo1, hi1 = shape_stats.mean - sd, shape_stats.mean + sd
    lo2, hi2 = shape_stats.mean - 2 * sd, shape_stats.mean + 2 * sd
    report.add_check("band_ordering",
                     bool(np.all(lo2 <= lo1) and np.all(lo1 <= shape_stats.mean)
                          and np.all(shape_stats.mean <= hi1) and np.all(hi1 <= hi2)),
                     "mu-2sd <= mu-sd <= mu <= mu+sd <= mu+2sd everywhere")
    report.add_check("proximal_rel_err_below_5pct", proximal_err < 0.05,
                     f"mean rel err {proximal_err:.4f} on depths < 0.9 * distal edge")
    report.add_check("shape_loss_drop_10x",
                     shape_hist.final < shape_hist.first / 10.0,
                     f"{shape_hist.first:.4g} -> {shape_hist.final:.4g}")
    report.finish(out)
    return report


def run_e2(cfg: ExperimentConfig) -> RunReport:
    """Convergence in training-set size, in- and out-of-distribution."""
    report, out = _prepare(cfg)
    p = cfg.params
    n_list = tuple(int(n) for n in p["n_list"])

    with _stage(report, "config"):
        if len(n_list) < 1:
            raise ConfigError("n_list must not be empty")
        report_only = len(n_list) == 1

    dist = _bragg_dist(p)
    grid = _depth_grid(p)
    centers = grid.centers(0)
    shifted = dist.shifted(p["shift_sigma"])

    with _stage(report, "datagen"):
        sets = [datasets.generate_1d(n, dist, grid, p["spectrum_variance"],
                                     p["spectrum_nodes"], seed=_sub(cfg.seed, 1, i))
                for i, n in enumerate(n_list)]

    with _stage(report, "train"):
        kw = dict(width=p["width"], n_hidden=p["n_hidden"],
                  n_dropout=p["n_dropout"], p_drop=p["p_drop"],
                  epochs=p["epochs"])
        shape_models = [_train_1d(ds, dist, p, task="shape",
                                  seed=_sub(cfg.seed, 2, i), **kw)[0]
                        for i, ds in enumerate(sets)]
        range_models = [_train_1d(ds, dist, p, task="range",
                                  seed=_sub(cfg.seed, 3, i), **kw)[0]
                        for i, ds in enumerate(sets)]

    with _stage(report, "evaluate"):
        ref_id = analytic1d.depth_dose_spectrum(
            BraggKleemanParams(*dist.mean), grid.edges(0),
            p["spectrum_variance"], p["spectrum_nodes"])
        ref_ood = analytic1d.depth_dose_spectrum(
            BraggKleemanParams(*shifted.mean), grid.edges(0),
            p["spectrum_variance"], p["spectrum_nodes"])
        range_ood = analytic1d.distal_edge(ref_ood)
        region_ood = _proximal_region(centers, range_ood)
        region_id = _proximal_region(centers, analytic1d.distal_edge(ref_id))

        shape_id_means, shape_ood_means = [], []
        shape_ood_err, range_ood_err = [], []
        range_id_mean, range_id_var = [], []
        for i, n in enumerate(n_list):
            st_id = uq.dropout_ensemble(shape_models[i], dist.mean,
                                        p["t_eval"], _sub(cfg.seed, 4, i))
            st_ood = uq.dropout_ensemble(shape_models[i], shifted.mean,
                                         p["t_eval"], _sub(cfg.seed, 5, i))
            shape_id_means.append(st_id.mean)
            shape_ood_means.append(st_ood.mean)
            shape_ood_err.append(_mean_rel_err(st_ood.mean, ref_ood.dose,
                                               region_ood))
            rg_id = uq.dropout_ensemble(range_models[i], dist.mean,
                                        p["t_eval"], _sub(cfg.seed, 6, i))
            rg_ood = uq.dropout_ensemble(range_models[i], shifted.mean,
                                         p["t_eval"], _sub(cfg.seed, 7, i))
            range_id_mean.append(float(rg_id.mean[0]))
            range_id_var.append(float(rg_id.variance[0]))
            range_ood_err.append(abs(float(rg_ood.mean[0]) - range_ood) / range_ood)

        # stability metric: mean pointwise relative deviation over the
        # proximal region, maximised over ordered pairs of mean curves
        big = [m for n, m in zip(n_list, shape_id_means) if n >= 100]
        pair_dev = 0.0
        for a in big:
            for b in big:
                if a is not b:
                    dev = float(np.mean(np.abs(a - b)[region_id] / b[region_id]))
                    pair_dev = max(pair_dev, dev)

        kappa = None
        if p["n_dropout"] > 0:
            kappa = uq.variance_inflation(range_models[-1], [0], dist, shifted,
                                          8, 64, child_seed(cfg.seed, 8))

    with _stage(report, "plots"):
        narr = np.asarray(n_list, dtype=float)
        report.add_files(out, plots.line_plot(
            out / "ood_error.svg", narr,
            [("shape", np.asarray(shape_ood_err)),
             ("range", np.asarray(range_ood_err))],
            "training samples", "relative error", logx=True, logy=True),
            caption="Mean prediction error at the 2-sd-shifted input as the "
                    "training-set size grows.")
        series = [(f"n={n}", m) for n, m in zip(n_list, shape_ood_means)]
        series.append(("reference", ref_ood.dose))
        report.add_files(out, plots.line_plot(
            out / "shape_mean_shifted.svg", centers, series,
            "depth (cm)", "dose (MeV/g)"),
            caption="Shape-model mean at the shifted input for each "
                    "training-set size, against the closed-form curve.")
        report.add_files(out, plots.line_plot(
            out / "range_mean_vs_n.svg", narr,
            [("range mean", np.asarray(range_id_mean))],
            "training samples", "predicted range (cm)", logx=True),
            caption="In-distribution range-model mean versus training-set size.")
        report.add_files(out, plots.line_plot(
            out / "range_var_vs_n.svg", narr,
            [("range variance", np.asarray(range_id_var))],
            "training samples", "predictive variance (cm^2)",
            logx=True, logy=True),
            caption="In-distribution range-model variance versus "
                    "training-set size.")

    report.metrics.update({
        "n_list": list(n_list),
        "shape_ood_err": shape_ood_err,
        "range_ood_err": range_ood_err,
        "range_id_mean": range_id_mean,
        "range_id_var": range_id_var,
        "indist_max_pairwise_dev": pair_dev,
        "report_only": report_only,
        "indist_shape_err": [
            _mean_rel_err(m, ref_id.dose, region_id) for m in shape_id_means],
    })
    if kappa is not None:
        report.metrics["kappa_range_ood"] = kappa
    if not report_only:
        err = np.asarray(shape_ood_err)
        inversions = int(np.sum(err[1:] > err[:-1]))
        report.add_check("ood_error_nonincreasing_allow1", inversions <= 1,
                         f"{inversions} inversion(s) in {err.tolist()}")
        if len(big) >= 2:
            report.add_check("indist_mean_stable_2pct", pair_dev < 0.02,
                             f"max pairwise deviation {pair_dev:.4f}")
    report.finish(out)
    return report


def run_e3(cfg: ExperimentConfig) -> RunReport:
    """Convergence in the number of stochastic forward passes."""
    report, out = _prepare(cfg)
    p = cfg.params
    t_list = tuple(int(t) for t in p["t_list"])

    with _stage(report, "config"):
        if any(b <= a for a, b in zip(t_list, t_list[1:])) or len(t_list) < 2:
            raise ConfigError(f"t_list must be strictly ascending with >= 2 "
                              f"entries, got {t_list}")

    dist = _bragg_dist(p)
    grid = _depth_grid(p)
    repeats = int(p["repeats"])

    with _stage(report, "datagen"):
        ds = datasets.generate_1d(p["n_train"], dist, grid,
                                  p["spectrum_variance"], p["spectrum_nodes"],
                                  seed=_sub(cfg.seed, 1))

    with _stage(report, "train"):
        kw = dict(width=p["width"], n_hidden=p["n_hidden"],
                  n_dropout=p["n_dropout"], p_drop=p["p_drop"],
                  epochs=p["epochs"])
        shape_model, _ = _train_1d(ds, dist, p, task="shape",
                                   seed=_sub(cfg.seed, 2), **kw)
        range_model, _ = _train_1d(ds, dist, p, task="range",
                                   seed=_sub(cfg.seed, 3), **kw)

    with _stage(report, "evaluate"):
        x0 = dist.mean
        results = {}
        for li, (label, model) in enumerate((("shape", shape_model),
                                             ("range", range_model))):
            se, mean_drift, var_level, mean_by_t = [], [], [], []
            for ti, t in enumerate(t_list):
                means = np.empty((repeats, model.n_out))
                vs = np.empty((repeats, model.n_out))
                for r in range(repeats):
                    st = uq.dropout_ensemble(model, x0, t,
                                             child_seed(cfg.seed, 4, li, ti, r))
                    means[r] = st.mean
                    vs[r] = st.variance
                se.append(float(means.std(axis=0, ddof=1).mean()))
                var_level.append(float(vs.mean()))
                mean_by_t.append(means.mean(axis=0))
            for a, b in zip(mean_by_t, mean_by_t[1:]):
                mean_drift.append(float(np.linalg.norm(b - a) / np.linalg.norm(a)))
            slope = float(np.polyfit(np.log10(t_list), np.log10(se), 1)[0])
            results[label] = dict(se=se, slope=slope, drift=mean_drift,
                                  var_level=var_level)

    with _stage(report, "plots"):
        tarr = np.asarray(t_list, dtype=float)
        report.add_files(out, plots.line_plot(
            out / "se_vs_passes.svg", tarr,
            [("shape", np.asarray(results["shape"]["se"])),
             ("range", np.asarray(results["range"]["se"]))],
            "ensemble passes", "standard error of mean",
            logx=True, logy=True),
            caption="Repeat-to-repeat standard error of the ensemble mean "
                    "versus the number of passes; the fitted slopes are in "
                    "the report.")
        report.add_files(out, plots.line_plot(
            out / "variance_vs_passes.svg", tarr,
            [("shape", np.asarray(results["shape"]["var_level"])),
             ("range", np.asarray(results["range"]["var_level"]))],
            "ensemble passes", "mean variance estimate", logx=True, logy=True),
            caption="Average predictive-variance estimate versus passes; the "
                    "level stabilises while its sampling noise decreases.")
        drift_x = tarr[1:]
        report.add_files(out, plots.line_plot(
            out / "mean_drift_vs_passes.svg", drift_x,
            [("shape", np.asarray(results["shape"]["drift"])),
             ("range", np.asarray(results["range"]["drift"]))],
            "ensemble passes", "relative change of mean",
            logx=True, logy=True),
            caption="Relative change of the ensemble mean between successive "
                    "pass counts.")

    report.metrics.update({
        "t_list": list(t_list),
        "repeats": repeats,
        "shape_se": results["shape"]["se"],
        "range_se": results["range"]["se"],
        "shape_slope": results["shape"]["slope"],
        "range_slope": results["range"]["slope"],
        "shape_mean_drift": results["shape"]["drift"],
        "range_mean_drift": results["range"]["drift"],
    })
    for label in ("shape", "range"):
        slope = results[label]["slope"]
        report.add_check(f"{label}_se_slope_half", abs(slope + 0.5) <= 0.1,
                         f"fitted slope {slope:.3f}, expected -0.5 +- 0.1")
    if 1000 in t_list and 10_000 in t_list:
        i = t_list.index(10_000) - 1
        drift = results["shape"]["drift"][i]
        report.add_check("mean_stable_1e3_1e4", drift < 0.01,
                         f"relative change {drift:.4f}")
    report.finish(out)
    return report


def run_e4(cfg: ExperimentConfig) -> RunReport:
    """Dropout design sweeps: layer ratio and dropout probability."""
    report, out = _prepare(cfg)
    p = cfg.params
    pairs = tuple((int(a), int(b)) for a, b in p["layer_pairs"])
    p_grid = tuple(float(v) for v in p["p_grid"])
    n_seeds = int(p["seeds_per_setting"])

    dist = _bragg_dist(p)
    grid = _depth_grid(p)

    with _stage(report, "datagen"):
        ds = datasets.generate_1d(p["n_train"], dist, grid,
                                  p["spectrum_variance"], p["spectrum_nodes"],
                                  seed=_sub(cfg.seed, 1))

    with _stage(report, "layer_sweep"):
        epi_by_pair = np.empty((len(pairs), n_seeds))
        for i, (l_d, l_h) in enumerate(pairs):
            for s in range(n_seeds):
                model, _ = _train_1d(ds, dist, p, task="shape",
                                     width=p["width"], n_hidden=l_h,
                                     n_dropout=l_d, p_drop=p["p_drop"],
                                     epochs=p["epochs"],
                                     seed=_sub(cfg.seed, 2, i, s))
                st = uq.dropout_ensemble(model, dist.mean, p["t_eval"],
                                         child_seed(cfg.seed, 3, i, s))
                epi_by_pair[i, s] = float(st.variance.mean())
        epi_mean = epi_by_pair.mean(axis=1)

    with _stage(report, "p_sweep"):
        # range model at a balanced stack, shape model at all-dropout
        sweep = (("range", (3, 3)), ("shape", (6, 0)))
        var_by_p = {}
        for li, (label, (l_d, l_h)) in enumerate(sweep):
            vals = []
            for j, pd in enumerate(p_grid):
                model, _ = _train_1d(ds, dist, p, task=label,
                                     width=p["width"], n_hidden=l_h,
                                     n_dropout=l_d, p_drop=pd,
                                     epochs=p["epochs"],
                                     seed=_sub(cfg.seed, 4, li, j))
                st = uq.dropout_ensemble(model, dist.mean, p["t_eval"],
                                         child_seed(cfg.seed, 5, li, j))
                vals.append(float(st.variance.mean()))
            var_by_p[label] = vals

    with _stage(report, "plots"):
        ld_axis = np.asarray([a for a, _ in pairs], dtype=float)
        report.add_files(out, plots.line_plot(
            out / "epi_vs_layers.svg", ld_axis,
            [("epistemic variance", epi_mean)],
            "dropout layers (of 6)", "mean epistemic variance"),
            caption="Mean epistemic variance of the shape model versus the "
                    "number of dropout layers in a six-block stack, averaged "
                    "over seeds.")
        report.add_files(out, plots.line_plot(
            out / "var_vs_pdrop.svg", np.asarray(p_grid),
            [("range (3 dropout, 3 hidden)", np.asarray(var_by_p["range"])),
             ("shape (6 dropout, 0 hidden)", np.asarray(var_by_p["shape"]))],
            "dropout probability", "mean epistemic variance", logy=True),
            caption="Epistemic variance versus dropout probability for the "
                    "two stack layouts.")

    idx_60 = pairs.index((6, 0))
    idx_15 = pairs.index((1, 5))
    idx_06 = pairs.index((0, 6))
    inversions = int(np.sum(epi_mean[1:] < epi_mean[:-1]))
    above = [v for pd, v in zip(p_grid, var_by_p["shape"]) if pd > 0.67]
    below = [v for pd, v in zip(p_grid, var_by_p["shape"]) if pd <= 0.67]
    growth = max(above) / max(below) if above and below else None

    report.metrics.update({
        "layer_pairs": [list(q) for q in pairs],
        "epi_by_layers": epi_mean.tolist(),
        "epi_by_layers_per_seed": epi_by_pair.tolist(),
        "p_grid": list(p_grid),
        "var_by_p_range": var_by_p["range"],
        "var_by_p_shape": var_by_p["shape"],
        "shape_p_growth_past_067": growth,
    })
    report.add_check("zero_epi_without_dropout",
                     epi_by_pair[idx_06].max() == 0.0,
                     "no dropout layers means identical passes")
    report.add_check("alldrop_exceeds_one_of_five",
                     epi_mean[idx_60] > epi_mean[idx_15],
                     f"{epi_mean[idx_60]:.3g} vs {epi_mean[idx_15]:.3g}")
    report.add_check("epi_nondecreasing_allow1", inversions <= 1,
                     f"{inversions} inversion(s) across {epi_mean.tolist()}")
    report.finish(out)
    return report


# ---------------------------------------------------------------------------
# Monte Carlo surrogate experiments


def _mc_grid(p: dict) -> VoxelGrid:
    return VoxelGrid(tuple(int(d) for d in p["grid_dims"]),
                     tuple(float(v) for v in p["grid_lo_cm"]),
                     tuple(float(v) for v in p["grid_hi_cm"]))


def _train_mc(ds: datasets.Dataset, dist: InputDistribution, p: dict,
              seed: int):
    loc, scale = uq.standardiser_from_dist(dist)
    X = (ds.inputs.astype(float) - loc) / scale
    mcfg = nn.MLPConfig(ds.input_dim, p["width"], p["n_hidden"],
                        p["n_dropout"], ds.targets.shape[1],
                        p_drop=p["p_drop"], output_floor=p["output_floor"])
    tcfg = nn.TrainConfig(lr=p["lr"], epochs=p["epochs"],
                          batch_size=p["batch_size"], seed=seed,
                          weight_decay=p["weight_decay"])
    params, hist = nn.train(X, ds.targets.astype(float), mcfg, tcfg)
    model = uq.Surrogate(params, mcfg, loc, scale,
                         meta={"task": "log_dose", "generator": ds.generator})
    return model, hist


def _colocation_fraction(err: np.ndarray, total_var: np.ndarray,
                         region: np.ndarray) -> float:
    """Fraction of top-decile error pixels inside top-quartile variance pixels.

    Both rankings are taken over ``region`` (pixels where the reference
    registered dose).  Outside it the error is floor noise and the
    overlap of any two rankings sits at the 0.25 chance level, which
    would say nothing about the model.
    """
    e = err[region]
    v = total_var[region]
    top_err = e >= np.quantile(e, 0.9)
    return float(np.mean(v[top_err] >= np.quantile(v, 0.75)))


def _slab_report(cfg: ExperimentConfig, sigma_names: tuple[str, ...],
                 assert_colocation: bool) -> RunReport:
    """Shared body of the 2-D slab experiments (run_e5, run_e6)."""
    report, out = _prepare(cfg)
    p = cfg.params
    grid = _mc_grid(p)
    sigma = np.asarray(p["input_sigma"], dtype=float)
    dist = InputDistribution(np.zeros(sigma.size), sigma, names=sigma_names)
    x0 = np.zeros(sigma.size)
    tcfg = mctransport.TransportConfig()

    with _stage(report, "datagen"):
        ds = datasets.generate_2d(p["n_train"], dist, grid, p["histories"],
                                  seed=_sub(cfg.seed, 1), cfg=tcfg,
                                  nominal_energy=p["nominal_energy"],
                                  energy_sigma=p["energy_sigma"])
        datasets.save_dataset(ds, out / "dataset")
        report.add_files(out, [out / "dataset" / "manifest.json",
                               out / "dataset" / "arrays.bin"])
        ph0, beam0 = datasets.slab_scene(x0, grid, p["nominal_energy"],
                                         p["energy_sigma"])
        fld0 = mctransport.estimate_dose(ph0, beam0, p["histories"], tcfg,
                                         seed=child_seed(cfg.seed, 7))
        ref_map = mctransport.project_log_dose(fld0, axis=2).values

    if sigma.size == 4:
        ph_z2, beam_z2 = datasets.slab_scene(np.zeros(2), grid,
                                             p["nominal_energy"],
                                             p["energy_sigma"])
        same = (np.array_equal(ph0.material_map, ph_z2.material_map)
                and beam0 == beam_z2)
        report.add_check("zero_input_matches_2d_scene", same,
                         "4-component zero input reproduces the nominal "
                         "slab and beam")

    with _stage(report, "train"):
        model, hist = _train_mc(ds, dist, p, _sub(cfg.seed, 2))
        model.save(out / "model")
        report.add_files(out, [out / "model" / "checkpoint.bin",
                               out / "model" / "model.json"])

    with _stage(report, "evaluate"):
        st = uq.dropout_ensemble(model, x0, p["t_map"], _sub(cfg.seed, 4))
        dec = uq.decompose(model, dist, p["decompose_outer"],
                           p["decompose_passes"], child_seed(cfg.seed, 6))
        shape2 = (grid.dims[0], grid.dims[1])
        mean_map = st.mean.reshape(shape2)
        epi_map = dec.epistemic.reshape(shape2)
        par_map = dec.parametric.reshape(shape2)
        total_map = dec.total.reshape(shape2)
        abs_err = np.abs(10.0 ** ref_map - 10.0 ** mean_map)
        log_err = np.abs(ref_map - mean_map)
        dosed = ref_map.ravel() > p["output_floor"] + 0.01
        coloc = _colocation_fraction(log_err.ravel(), total_map.ravel(), dosed)

    with _stage(report, "plots"):
        extent = (grid.lo[0], grid.hi[0], grid.lo[1], grid.hi[1])
        report.add_files(out, plots.line_plot(
            out / "loss_history.svg", np.arange(p["epochs"]),
            [("loss", hist.per_epoch)], "epoch", "training loss", logy=True),
            caption="Training loss of the log-dose surrogate.")
        report.add_files(out, plots.heatmap_panels(
            out / "mean_vs_mc.svg",
            [("surrogate mean", mean_map), ("monte carlo", ref_map)],
            extent, "x (cm)", "y (cm)", log_labels=True),
            caption="Surrogate ensemble mean against the transport reference "
                    "at the nominal input (log10 dose).")
        report.add_files(out, plots.heatmap_panels(
            out / "variance_maps.svg",
            [("parametric", par_map), ("epistemic", epi_map)],
            extent, "x (cm)", "y (cm)"),
            caption="Variance decomposition maps at the nominal input.")
        report.add_files(out, plots.heatmap_panels(
            out / "error_maps.svg",
            [("absolute", abs_err), ("log-space", log_err)],
            extent, "x (cm)", "y (cm)"),
            caption="Absolute (linear dose) and log-space error maps against "
                    "the transport reference.")

    report.metrics.update({
        "loss_first": hist.first,
        "loss_final": hist.final,
        "colocation_fraction": coloc,
        "mean_epistemic": float(dec.epistemic.mean()),
        "mean_parametric": float(dec.parametric.mean()),
        "max_log_err": float(log_err.max()),
    })
    report.add_check("loss_decreased", hist.final < hist.first,
                     f"{hist.first:.4g} -> {hist.final:.4g}")
    if assert_colocation:
        report.add_check("error_uncertainty_colocation", coloc > 0.5,
                         f"fraction {coloc:.3f} of top-decile log-error pixels "
                         "in top-quartile total-variance pixels over the dose "
                         "region")
    report.finish(out)
    return report


def run_e5(cfg: ExperimentConfig) -> RunReport:
    """2-D slab phantom with geometry uncertainty."""
    return _slab_report(cfg, ("x1", "x2"), assert_colocation=True)


def run_e6(cfg: ExperimentConfig) -> RunReport:
    """2-D slab phantom with geometry and beam uncertainty.

    Beam-angle and energy swings put the predictive variance at the
    fringe of the swept region rather than along the nominal strip, so
    the error/uncertainty co-location fraction is reported but not
    asserted here.
    """
    return _slab_report(cfg, ("x1", "x2", "x3", "x4"), assert_colocation=False)


def run_e7(cfg: ExperimentConfig) -> RunReport:
    """3-D water phantom with beam-position uncertainty plus timing."""
    report, out = _prepare(cfg)
    p = cfg.params
    grid = _mc_grid(p)
    sigma = np.asarray(p["input_sigma"], dtype=float)
    dist = InputDistribution(np.zeros(2), sigma, names=("x1", "x2"))
    x0 = np.zeros(2)
    tcfg = mctransport.TransportConfig()

    with _stage(report, "datagen"):
        ds = datasets.generate_3d(p["n_train"], dist, grid, p["histories"],
                                  seed=_sub(cfg.seed, 1), cfg=tcfg,
                                  energy_mean=p["energy_mean"],
                                  energy_sigma=p["energy_sigma"],
                                  spatial_sigma=p["spatial_sigma"],
                                  angular_sigma=p["angular_sigma"])
        datasets.save_dataset(ds, out / "dataset")
        report.add_files(out, [out / "dataset" / "manifest.json",
                               out / "dataset" / "arrays.bin"])
        ph0, beam0 = datasets.beam3d_scene(x0, grid, p["energy_mean"],
                                           p["energy_sigma"],
                                           p["spatial_sigma"],
                                           p["angular_sigma"])
        fld0 = mctransport.estimate_dose(ph0, beam0, p["histories"], tcfg,
                                         seed=child_seed(cfg.seed, 7))
        ref = mctransport.log_transform(fld0).values

    with _stage(report, "train"):
        model, hist = _train_mc(ds, dist, p, _sub(cfg.seed, 2))
        model.save(out / "model")
        report.add_files(out, [out / "model" / "checkpoint.bin",
                               out / "model" / "model.json"])

    with _stage(report, "evaluate"):
        st = uq.dropout_ensemble(model, x0, p["t_map"], _sub(cfg.seed, 4))
        dec = uq.decompose(model, dist, p["decompose_outer"],
                           p["decompose_passes"], child_seed(cfg.seed, 6))
        dims = grid.dims
        mean_vol = st.mean.reshape(dims)
        var_vol = st.variance.reshape(dims)
        epi_vol = dec.epistemic.reshape(dims)
        par_vol = dec.parametric.reshape(dims)
        ref_vol = ref
        j_mid = dims[1] // 2

    with _stage(report, "timing"):
        reps = int(p["timing_repeats"])
        mc_times, fwd_times = [], []
        rng = default_rng(child_seed(cfg.seed, 8))
        model.predict(x0, rng)    # warm caches before timing
        for r in range(reps):
            t0 = time.perf_counter()
            mctransport.estimate_dose(ph0, beam0, p["histories"], tcfg,
                                      seed=child_seed(cfg.seed, 9, r))
            mc_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            model.predict(x0, rng)
            fwd_times.append(time.perf_counter() - t0)
        mc_s = min(mc_times)
        fwd_s = min(fwd_times)
        speedup = mc_s / fwd_s
        timing_csv = out / "timing.csv"
        np.savetxt(timing_csv,
                   np.array([[mc_s, fwd_s, speedup]]), delimiter=",",
                   header="mc_seconds,forward_seconds,speedup", comments="")
        report.add_files(out, [timing_csv])

    with _stage(report, "plots"):
        extent = (grid.lo[0], grid.hi[0], grid.lo[2], grid.hi[2])
        report.add_files(out, plots.line_plot(
            out / "loss_history.svg", np.arange(p["epochs"]),
            [("loss", hist.per_epoch)], "epoch", "training loss", logy=True),
            caption="Training loss of the volumetric log-dose surrogate.")
        report.add_files(out, plots.heatmap_panels(
            out / "mean_vs_mc.svg",
            [("surrogate mean", mean_vol[:, j_mid, :]),
             ("monte carlo", ref_vol[:, j_mid, :])],
            extent, "x (cm)", "z (cm)", log_labels=True),
            caption="Central-slice surrogate mean against the transport "
                    "reference at the nominal input (log10 dose).")
        report.add_files(out, plots.heatmap_panels(
            out / "variance_maps.svg",
            [("total", var_vol[:, j_mid, :]),
             ("parametric", par_vol[:, j_mid, :]),
             ("epistemic", epi_vol[:, j_mid, :])],
            extent, "x (cm)", "z (cm)"),
            caption="Central-slice predictive variance and its decomposition.")
        abs_err = np.abs(10.0 ** ref_vol[:, j_mid, :]
                         - 10.0 ** mean_vol[:, j_mid, :])
        log_err = np.abs(ref_vol[:, j_mid, :] - mean_vol[:, j_mid, :])
        report.add_files(out, plots.heatmap_panels(
            out / "error_maps.svg",
            [("absolute", abs_err), ("log-space", log_err)],
            extent, "x (cm)", "z (cm)"),
            caption="Central-slice absolute and log-space error maps.")

    report.metrics.update({
        "loss_first": hist.first,
        "loss_final": hist.final,
        "mc_seconds": mc_s,
        "forward_seconds": fwd_s,
        "speedup": speedup,
        "reference_speedup_note": (
            "a full-production transport engine against a GPU surrogate has "
            "been reported near x12000 at much higher history counts; the "
            "number above is the in-package measurement"),
    })
    report.add_check("loss_decreased", hist.final < hist.first,
                     f"{hist.first:.4g} -> {hist.final:.4g}")
    report.add_check("surrogate_100x_faster", speedup >= 100.0,
                     f"measured speedup {speedup:.0f}x")
    report.finish(out)
    return report


RUNNERS = {
    "e1": run_e1, "e2": run_e2, "e3": run_e3, "e4": run_e4,
    "e5": run_e5, "e6": run_e6, "e7": run_e7,
}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    return RUNNERS[cfg.experiment](cfg)
