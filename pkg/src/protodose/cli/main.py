"""Command-line front end.

Subcommands cover the pipeline stages (gen, train, predict, decompose,
coverage, calibrate), the packaged experiments (run e1..e7) and the
index builder (report).  Global flags --seed, --scale, --out and
--config may appear before or after the subcommand.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from numpy.random import default_rng

from .. import datasets, nn, uq
from ..errors import (CheckpointError, ConfigError, DatasetFormatError,
                      EdgeNotFoundError, GeometryError, NumericError,
                      OutOfDomainError, ShapeError, SpectrumError,
                      TrainingError)
from ..phantom import InputDistribution
from ..seeding import child_seed
from . import presets, report as report_mod
from .experiments import StageError, run_experiment
from .presets import load_overrides, resolve_config

PKG_ERRORS = (CheckpointError, ConfigError, DatasetFormatError,
              EdgeNotFoundError, GeometryError, NumericError,
              OutOfDomainError, ShapeError, SpectrumError, TrainingError)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps subcommand-position flags from clobbering values that
    # were already parsed before the subcommand
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="root seed (default 0)")
    common.add_argument("--scale", choices=presets.SCALES,
                        default=argparse.SUPPRESS,
                        help="preset scale (default desk)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="JSON file with parameter overrides")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="protodose",
        description="Proton dose surrogates with uncertainty decomposition.",
        parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common],
                           help="run one packaged experiment")
    p_run.add_argument("experiment", choices=presets.EXPERIMENTS)

    p_gen = sub.add_parser("gen", parents=[common],
                           help="generate a dataset")
    p_gen.add_argument("--kind", choices=("bragg1d", "slab2d", "beam3d"),
                       required=True)
    p_gen.add_argument("--count", type=int, default=None,
                       help="samples (default: preset)")

    p_train = sub.add_parser("train", parents=[common],
                             help="train a surrogate on a saved dataset")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--width", type=int, default=128)
    p_train.add_argument("--hidden", type=int, default=3)
    p_train.add_argument("--dropout", type=int, default=3)
    p_train.add_argument("--p-drop", type=float, default=0.05)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--epochs", type=int, default=500)
    p_train.add_argument("--batch", type=int, default=None)
    p_train.add_argument("--weight-decay", type=float, default=0.01)

    p_pred = sub.add_parser("predict", parents=[common],
                            help="evaluate a trained surrogate")
    p_pred.add_argument("--model", required=True, help="model directory")
    p_pred.add_argument("--x", required=True,
                        help="comma-separated input components")
    p_pred.add_argument("--passes", type=int, default=0,
                        help="0: deterministic forward; >=2: ensemble mean/sd")

    p_dec = sub.add_parser("decompose", parents=[common],
                           help="epistemic/parametric variance split")
    p_dec.add_argument("--model", required=True)
    p_dec.add_argument("--outer", type=int, default=16)
    p_dec.add_argument("--passes", type=int, default=32)

    p_cov = sub.add_parser("coverage", parents=[common],
                           help="empirical interval coverage on a dataset")
    p_cov.add_argument("--model", required=True)
    p_cov.add_argument("--data", required=True)
    p_cov.add_argument("--passes", type=int, default=32)
    p_cov.add_argument("--levels", default="0.5,0.8,0.9,0.95")

    p_cal = sub.add_parser("calibrate", parents=[common],
                           help="split-conformal interval half-width")
    p_cal.add_argument("--model", required=True)
    p_cal.add_argument("--data", required=True)
    p_cal.add_argument("--alpha", type=float, default=0.1)
    p_cal.add_argument("--passes", type=int, default=32)
    p_cal.add_argument("--per-component", action="store_true")

    p_rep = sub.add_parser("report", parents=[common],
                           help="build index.html for a run directory")
    p_rep.add_argument("run_dir", nargs="?", default=None,
                       help="run directory (default: --out)")

    return parser


def _flag(args, name, fallback):
    return getattr(args, name, fallback)


def _model_and_dist(model_dir):
    model = uq.Surrogate.load(model_dir)
    dist_dict = model.meta.get("generator", {}).get("dist")
    dist = InputDistribution.from_dict(dist_dict) if dist_dict else None
    return model, dist


def cmd_run(args) -> int:
    exp = args.experiment
    seed = _flag(args, "seed", 0)
    scale = _flag(args, "scale", "desk")
    out = Path(_flag(args, "out", Path("runs") / exp))
    config = _flag(args, "config", None)
    overrides = load_overrides(config) if config else None
    cfg = resolve_config(exp, scale, out, seed, overrides)
    rep = run_experiment(cfg)
    report_mod.build_index(out)
    for stage, secs in rep.timings.items():
        print(f"{stage}: {secs:.2f} s")
    failed = [c for c in rep.checks if not c["passed"]]
    for c in rep.checks:
        status = "pass" if c["passed"] else "FAIL"
        print(f"check {c['name']}: {status}  {c['detail']}")
    print(f"report: {out / 'report.json'}")
    if failed:
        print(f"error [checks] {len(failed)} check(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_gen(args) -> int:
    seed = _flag(args, "seed", 0)
    scale = _flag(args, "scale", "desk")
    out = Path(_flag(args, "out", Path("runs") / f"gen-{args.kind}"))
    from .experiments import _bragg_dist, _mc_grid, _depth_grid

    if args.kind == "bragg1d":
        p = presets.preset("e1", scale)
        count = args.count or p["n_train"]
        ds = datasets.generate_1d(count, _bragg_dist(p), _depth_grid(p),
                                  p["spectrum_variance"], p["spectrum_nodes"],
                                  seed=seed)
    elif args.kind == "slab2d":
        p = presets.preset("e5", scale)
        count = args.count or p["n_train"]
        sigma = np.asarray(p["input_sigma"], dtype=float)
        dist = InputDistribution(np.zeros(sigma.size), sigma)
        ds = datasets.generate_2d(count, dist, _mc_grid(p), p["histories"],
                                  seed=seed,
                                  nominal_energy=p["nominal_energy"],
                                  energy_sigma=p["energy_sigma"])
    else:
        p = presets.preset("e7", scale)
        count = args.count or p["n_train"]
        sigma = np.asarray(p["input_sigma"], dtype=float)
        dist = InputDistribution(np.zeros(sigma.size), sigma)
        ds = datasets.generate_3d(count, dist, _mc_grid(p), p["histories"],
                                  seed=seed, energy_mean=p["energy_mean"],
                                  energy_sigma=p["energy_sigma"],
                                  spatial_sigma=p["spatial_sigma"],
                                  angular_sigma=p["angular_sigma"])
    datasets.save_dataset(ds, out)
    print(f"wrote {ds.n} samples to {out}")
    return 0


def cmd_train(args) -> int:
    seed = _flag(args, "seed", 0)
    out = Path(_flag(args, "out", Path("runs") / "model"))
    ds = datasets.load_dataset(args.data)
    dist_dict = ds.generator.get("dist")
    if dist_dict:
        dist = InputDistribution.from_dict(dist_dict)
        loc, scale_arr = uq.standardiser_from_dist(dist)
    else:
        loc = ds.inputs.mean(axis=0).astype(float)
        scale_arr = np.where(ds.inputs.std(axis=0) > 0,
                             ds.inputs.std(axis=0), 1.0).astype(float)
    X = (ds.inputs.astype(float) - loc) / scale_arr
    floor = -10.0 if ds.log_targets else None
    mcfg = nn.MLPConfig(ds.input_dim, args.width, args.hidden, args.dropout,
                        ds.targets.shape[1], p_drop=args.p_drop,
                        output_floor=floor)
    tcfg = nn.TrainConfig(lr=args.lr, epochs=args.epochs,
                          batch_size=args.batch, seed=seed,
                          weight_decay=args.weight_decay)
    params, hist = nn.train(X, ds.targets.astype(float), mcfg, tcfg)
    model = uq.Surrogate(params, mcfg, loc, scale_arr,
                         meta={"generator": ds.generator})
    model.save(out)
    hist.to_csv(out / "loss.csv")
    print(f"trained {args.epochs} epochs, loss {hist.first:.4g} -> "
          f"{hist.final:.4g}; model in {out}")
    return 0


def _parse_x(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"--x must be comma-separated floats, got {text!r}")


def cmd_predict(args) -> int:
    seed = _flag(args, "seed", 0)
    out = _flag(args, "out", None)
    model, _ = _model_and_dist(args.model)
    x = _parse_x(args.x)
    if args.passes == 0:
        y = model.predict(x)
        header, cols = "prediction", [y]
    elif args.passes == 1:
        y = model.predict(x, default_rng(child_seed(seed, 1)))
        header, cols = "prediction", [y]
    else:
        st = uq.dropout_ensemble(model, x, args.passes, child_seed(seed, 1))
        header, cols = "mean,sd", [st.mean, np.sqrt(st.variance)]
    if out:
        np.savetxt(out, np.column_stack(cols), delimiter=",", header=header,
                   comments="")
        print(f"wrote {out}")
    else:
        for row in np.column_stack(cols)[:20]:
            print(",".join(f"{v:.6g}" for v in row))
        if cols[0].size > 20:
            print(f"... ({cols[0].size} components; use --out FILE for all)")
    return 0


def cmd_decompose(args) -> int:
    seed = _flag(args, "seed", 0)
    out = _flag(args, "out", None)
    model, dist = _model_and_dist(args.model)
    if dist is None:
        raise ConfigError("model metadata has no input distribution; "
                          "train via this package's pipeline first")
    dec = uq.decompose(model, dist, args.outer, args.passes,
                       child_seed(seed, 1))
    print(f"epistemic mean {dec.epistemic.mean():.6g}  "
          f"parametric mean {dec.parametric.mean():.6g}  "
          f"total mean {dec.total.mean():.6g}")
    if out:
        np.savetxt(out, np.column_stack([dec.epistemic, dec.parametric,
                                         dec.total]),
                   delimiter=",", header="epistemic,parametric,total",
                   comments="")
        print(f"wrote {out}")
    return 0


def cmd_coverage(args) -> int:
    seed = _flag(args, "seed", 0)
    out = _flag(args, "out", None)
    model, _ = _model_and_dist(args.model)
    ds = datasets.load_dataset(args.data)
    levels = [float(v) for v in args.levels.split(",")]
    rep = uq.coverage(model, ds.inputs.astype(float), ds.targets.astype(float),
                      levels, args.passes, child_seed(seed, 1))
    for lvl, emp in zip(rep.levels, rep.empirical):
        print(f"nominal {lvl:.2f}  empirical {emp:.4f}")
    if rep.degenerate:
        print("warning: every interval had zero width")
    if out:
        rep.to_csv(out)
        print(f"wrote {out}")
    return 0


def cmd_calibrate(args) -> int:
    seed = _flag(args, "seed", 0)
    model, _ = _model_and_dist(args.model)
    ds = datasets.load_dataset(args.data)
    off = uq.conformal_calibrate(model, ds.inputs.astype(float),
                                 ds.targets.astype(float), args.alpha,
                                 args.passes, child_seed(seed, 1),
                                 per_component=args.per_component)
    if off.per_component:
        hw = np.asarray(off.half_width)
        print(f"alpha {off.alpha}: per-component half-widths, "
              f"median {np.median(hw):.6g}, max {hw.max():.6g} "
              f"({off.n_residuals} residuals)")
    else:
        print(f"alpha {off.alpha}: half-width {off.half_width:.6g} "
              f"({off.n_residuals} residuals)")
    return 0


def cmd_report(args) -> int:
    run_dir = args.run_dir or _flag(args, "out", None)
    if run_dir is None:
        raise ConfigError("report needs a run directory (positional or --out)")
    index = report_mod.build_index(run_dir)
    print(f"wrote {index}")
    return 0


_HANDLERS = {
    "run": cmd_run, "gen": cmd_gen, "train": cmd_train,
    "predict": cmd_predict, "decompose": cmd_decompose,
    "coverage": cmd_coverage, "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except PKG_ERRORS as exc:
        print(f"error [config] {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
