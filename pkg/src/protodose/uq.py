"""Dropout-ensemble statistics: decomposition, coverage, conformal calibration.

For a model f with stochastic dropout passes, T passes at a fixed input give

    mu_hat    = (1/T) sum_t f_t(x)
    sigma2(x) = (1/(T-1)) sum_t (f_t(x) - mu_hat)^2        (epistemic at x)

and over S input samples x_s from the input distribution,

    Var_epi = (1/S)     sum_s sigma2(x_s)
    Var_par = (1/(S-1)) sum_s (mu_hat(x_s) - mu_bar)^2
    Var_tot = Var_epi + Var_par

which is the plug-in law of total variance, holding exactly componentwise.

Every estimator here takes a duck-typed model: anything with
``predict(x, rng=None)`` (rng None = deterministic pass) and optionally a
vectorised ``ensemble(x, passes, rng) -> (passes, n_out)``.  The Surrogate
wrapper below adapts the numpy network, and tests substitute synthetic
models with known distributions.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import nn
from .errors import ConfigError, ShapeError
from .phantom import InputDistribution, sample_inputs
from .seeding import as_rng, as_seedseq


@dataclass
class Surrogate:
    """Trained network plus the input standardisation used at training time."""

    params: nn.ModelParams
    cfg: nn.MLPConfig
    input_loc: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def _prep(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.cfg.n_in:
            raise ShapeError(f"input has {x.shape[-1]} components, "
                             f"model expects {self.cfg.n_in}")
        if self.input_loc is None:
            return x
        return (x - self.input_loc) / self.input_scale

    def predict(self, x, rng=None) -> np.ndarray:
        return nn.forward(self.params, self.cfg, self._prep(x), rng=rng)

    def ensemble(self, x, passes: int, rng) -> np.ndarray:
        return nn.forward_ensemble(self.params, self.cfg, self._prep(x), passes, rng)

    @property
    def n_out(self) -> int:
        return self.cfg.n_out

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        nn.save_checkpoint(self.params, self.cfg, os.path.join(directory, "checkpoint.bin"))
        sidecar = {
            "format": 1,
            "input_loc": None if self.input_loc is None else list(map(float, self.input_loc)),
            "input_scale": None if self.input_scale is None else list(map(float, self.input_scale)),
            "meta": self.meta,
        }
        with open(os.path.join(directory, "model.json"), "w") as fh:
            json.dump(sidecar, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "Surrogate":
        params, cfg = nn.load_checkpoint(os.path.join(directory, "checkpoint.bin"))
        loc = scale = None
        meta = {}
        sidecar_path = os.path.join(directory, "model.json")
        if os.path.exists(sidecar_path):
            with open(sidecar_path) as fh:
                sidecar = json.load(fh)
            loc = sidecar.get("input_loc")
            scale = sidecar.get("input_scale")
            loc = None if loc is None else np.asarray(loc, dtype=float)
            scale = None if scale is None else np.asarray(scale, dtype=float)
            meta = sidecar.get("meta", {})
        return cls(params, cfg, loc, scale, meta)


def standardiser_from_dist(dist: InputDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Location/scale pair for z-scoring inputs; zero sigmas fall back to 1."""
    scale = np.where(dist.sigma > 0, dist.sigma, 1.0)
    return dist.mean.copy(), scale


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    variance: np.ndarray       # unbiased, divisor passes - 1
    passes: int


def _model_passes(model, x, passes: int, rng: np.random.Generator) -> np.ndarray:
    if hasattr(model, "ensemble"):
        out = np.asarray(model.ensemble(x, passes, rng), dtype=float)
    else:
        out = np.stack([np.asarray(model.predict(x, rng), dtype=float)
                        for _ in range(passes)])
    if out.ndim != 2 or out.shape[0] != passes:
        raise ShapeError(f"model passes must stack to (passes, n_out), got {out.shape}")
    return out


def _row_variance(out: np.ndarray) -> np.ndarray:
    """Unbiased per-component variance over rows, shifted by the first row.

    The shift leaves the result unchanged mathematically but makes it an
    exact 0.0 when every pass produced identical outputs (no dropout
    layers); the plain two-pass formula leaves (eps * scale)^2 residue
    because the mean of n identical floats need not be representable.
    """
    return (out - out[0]).var(axis=0, ddof=1)


def dropout_ensemble(model, x, passes: int, seed) -> EnsembleStats:
    """Mean and unbiased variance over ``passes`` stochastic forwards."""
    if passes < 2:
        raise ConfigError(f"need at least 2 passes for a variance, got {passes}")
    out = _model_passes(model, x, passes, as_rng(seed))
    return EnsembleStats(out.mean(axis=0), _row_variance(out), passes)


@dataclass(frozen=True)
class VarianceDecomposition:
    epistemic: np.ndarray
    parametric: np.ndarray
    total: np.ndarray
    grand_mean: np.ndarray
    outer_samples: int
    passes: int


def decompose(model, dist: InputDistribution, outer_samples: int, passes: int,
              seed) -> VarianceDecomposition:
    """Nested MC estimate of epistemic and parametric variance components.

    Draws ``outer_samples`` inputs from ``dist``; for each, a T-pass dropout
    ensemble.  total = epistemic + parametric holds exactly by construction.
    """
    if outer_samples < 2:
        raise ConfigError(f"need at least 2 outer samples, got {outer_samples}")
    root = as_seedseq(seed)
    children = root.spawn(outer_samples + 1)
    xs = sample_inputs(dist, outer_samples, np.random.default_rng(children[0]))
    means = []
    epi = None
    for s in range(outer_samples):
        out = _model_passes(model, xs[s], passes, np.random.default_rng(children[s + 1]))
        if passes < 2:
            raise ConfigError("need at least 2 passes for a variance")
        means.append(out.mean(axis=0))
        v = _row_variance(out)
        epi = v if epi is None else epi + v
    means = np.stack(means)
    epistemic = epi / outer_samples
    parametric = means.var(axis=0, ddof=1)
    return VarianceDecomposition(epistemic, parametric, epistemic + parametric,
                                 means.mean(axis=0), outer_samples, passes)


@dataclass(frozen=True)
class CoverageReport:
    levels: np.ndarray
    empirical: np.ndarray
    n_pairs: int
    n_components: int
    degenerate: bool    # every ensemble width was exactly zero

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.levels, self.empirical]),
                   delimiter=",", header="nominal,empirical", comments="")


def coverage(model, inputs, targets, levels, passes: int, seed) -> CoverageReport:
    """Empirical coverage of central Gaussian intervals mu +- z(l) * sigma.

    Counted over every (sample, component) pair.  Zero-width intervals count
    as hits only when the residual is exactly zero.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[0] != targets.shape[0] or inputs.shape[0] == 0:
        raise ConfigError("inputs and targets must pair up and be non-empty")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any(levels <= 0) or np.any(levels >= 1):
        raise ConfigError("coverage levels must lie in (0, 1)")
    z = ndtri(0.5 * (1.0 + levels))
    root = as_seedseq(seed)
    children = root.spawn(inputs.shape[0])
    hits = np.zeros(levels.size)
    any_width = False
    for i in range(inputs.shape[0]):
        out = _model_passes(model, inputs[i], passes, np.random.default_rng(children[i]))
        mu = out.mean(axis=0)
        sd = np.sqrt(_row_variance(out))
        any_width = any_width or bool(np.any(sd > 0))
        resid = np.abs(targets[i] - mu)
        hits += (resid[None, :] <= z[:, None] * sd[None, :]).sum(axis=1)
    n_total = inputs.shape[0] * targets.shape[1]
    return CoverageReport(levels, hits / n_total, inputs.shape[0], targets.shape[1],
                          degenerate=not any_width)


@dataclass(frozen=True)
class CalibrationOffset:
    alpha: float
    half_width: float | np.ndarray   # scalar when pooled, per-component otherwise
    per_component: bool
    n_residuals: int


def _rank_quantile(r: np.ndarray, alpha: float) -> float:
    """ceil((1-alpha)(n+1))-th order statistic; +inf when the rank exceeds n."""
    n = r.size
    k = math.ceil((1.0 - alpha) * (n + 1))
    if k > n:
        return float("inf")
    return float(np.partition(r, k - 1)[k - 1])


def conformal_calibrate(model, inputs, targets, alpha: float, passes: int, seed,
                        per_component: bool = False) -> CalibrationOffset:
    """Split-conformal half-width from absolute residuals of ensemble means.

    Residuals pool across samples and components by default; with
    per_component=True each output component gets its own half-width.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if inputs.shape[0] == 0:
        raise ConfigError("empty calibration set")
    if inputs.shape[0] != targets.shape[0]:
        raise ConfigError("inputs and targets must pair up")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    root = as_seedseq(seed)
    children = root.spawn(inputs.shape[0])
    resid = np.empty_like(targets)
    for i in range(inputs.shape[0]):
        out = _model_passes(model, inputs[i], passes, np.random.default_rng(children[i]))
        resid[i] = np.abs(targets[i] - out.mean(axis=0))
    if per_component:
        q = np.array([_rank_quantile(resid[:, j], alpha) for j in range(resid.shape[1])])
        return CalibrationOffset(alpha, q, True, resid.shape[0])
    return CalibrationOffset(alpha, _rank_quantile(resid.ravel(), alpha), False, resid.size)


def variance_inflation(model, region, dist_id: InputDistribution,
                       dist_ood: InputDistribution, outer_samples: int,
                       passes: int, seed) -> float:
    """kappa: mean epistemic variance over ``region``, out- over in-distribution.

    ``region`` is a boolean mask or index array over output components.
    """
    region = np.asarray(region)
    if region.dtype == bool:
        region = np.nonzero(region)[0]
    if region.size == 0:
        raise ConfigError("region must select at least one component")
    root = as_seedseq(seed)
    kid_id, kid_ood = root.spawn(2)
    dec_id = decompose(model, dist_id, outer_samples, passes, kid_id)
    dec_ood = decompose(model, dist_ood, outer_samples, passes, kid_ood)
    denom = float(dec_id.epistemic[region].mean())
    if denom == 0.0:
        raise ConfigError("in-distribution epistemic variance is zero over the region")
    return float(dec_ood.epistemic[region].mean()) / denom


def normalised_error(model, x, target, passes: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """(absolute error, error / ensemble sigma) of the ensemble mean vs target.

    Components with zero ensemble sigma report +inf unless the residual is
    also zero.
    """
    stats = dropout_ensemble(model, x, passes, seed)
    target = np.asarray(target, dtype=float)
    if target.shape != stats.mean.shape:
        raise ShapeError(f"target shape {target.shape} != output shape {stats.mean.shape}")
    abs_err = np.abs(target - stats.mean)
    sd = np.sqrt(stats.variance)
    norm = np.full_like(abs_err, np.inf)
    np.divide(abs_err, sd, out=norm, where=sd > 0)
    norm[(sd == 0) & (abs_err == 0)] = 0.0
    return abs_err, norm
