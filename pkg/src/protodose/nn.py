"""Feedforward dropout network in plain numpy.

The stack is: input layer ReLU(W x + b) lifting n_in to the hidden width,
then n_dropout masked layers and n_hidden plain layers at constant width
(dropout block first by default), then an affine output layer, optionally
clamped from below by output_floor.  A dropout mask multiplies the pre-bias
linear map, ReLU(mask * (W a) + b), and there is no inverted-dropout
rescaling: the deterministic forward simply uses the identity mask.

Training is AdamW on the mean squared error (1/B) sum_b ||f(x_b) - d_b||^2
with one fresh mask per dropout layer per minibatch, shared across the
minibatch rows.  Gradients are exact reverse-mode derivatives of that loss
for the masks in force.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (CheckpointError, ConfigError, NumericError, ShapeError,
                     TrainingError)
from .seeding import as_rng

CHECKPOINT_MAGIC = b"PDOSEMLP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MLPConfig:
    n_in: int
    width: int
    n_hidden: int
    n_dropout: int
    n_out: int
    p_drop: float = 0.0
    output_floor: float | None = None
    dropout_first: bool = True

    def __post_init__(self):
        for attr in ("n_in", "width", "n_out"):
            if getattr(self, attr) < 1:
                raise ConfigError(f"{attr} must be >= 1")
        for attr in ("n_hidden", "n_dropout"):
            if getattr(self, attr) < 0:
                raise ConfigError(f"{attr} must be >= 0")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop must be in [0, 1), got {self.p_drop}")

    def layer_kinds(self) -> list[str]:
        blocks = ["drop"] * self.n_dropout + ["hidden"] * self.n_hidden
        if not self.dropout_first:
            blocks = ["hidden"] * self.n_hidden + ["drop"] * self.n_dropout
        return ["in"] + blocks + ["out"]

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output order."""
        dims = [(self.n_in, self.width)]
        dims += [(self.width, self.width)] * (self.n_hidden + self.n_dropout)
        dims += [(self.width, self.n_out)]
        return dims


@dataclass
class ModelParams:
    """Weight matrices (fan_out, fan_in) and bias vectors, input to output order."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "ModelParams":
        return ModelParams([w.astype(dtype) for w in self.weights],
                           [b.astype(dtype) for b in self.biases])

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def init_params(cfg: MLPConfig, rng, dtype=np.float64) -> ModelParams:
    """He-style init: weights N(0, 2/fan_in), biases zero."""
    rng = as_rng(rng)
    ws, bs = [], []
    for fan_in, fan_out in cfg.layer_dims():
        ws.append((rng.standard_normal((fan_out, fan_in))
                   * np.sqrt(2.0 / fan_in)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return ModelParams(ws, bs)


def check_params(params: ModelParams, cfg: MLPConfig) -> None:
    dims = cfg.layer_dims()
    if len(params.weights) != len(dims) or len(params.biases) != len(dims):
        raise ShapeError(f"expected {len(dims)} layers, got {len(params.weights)}")
    for i, (fan_in, fan_out) in enumerate(dims):
        if params.weights[i].shape != (fan_out, fan_in):
            raise ShapeError(
                f"layer {i}: weight shape {params.weights[i].shape} != {(fan_out, fan_in)}")
        if params.biases[i].shape != (fan_out,):
            raise ShapeError(f"layer {i}: bias shape {params.biases[i].shape} != {(fan_out,)}")


def sample_mask(width: int, p_drop: float, rng) -> np.ndarray:
    """0/1 mask vector with entries equal to 1 with probability 1 - p_drop."""
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"p_drop must be in [0, 1), got {p_drop}")
    rng = as_rng(rng)
    return (rng.random(width) >= p_drop).astype(float)


def draw_masks(cfg: MLPConfig, rng) -> list[np.ndarray]:
    """One fresh mask per dropout layer (empty list when there are none)."""
    rng = as_rng(rng)
    return [sample_mask(cfg.width, cfg.p_drop, rng) for _ in range(cfg.n_dropout)]


def _forward_cached(params, cfg, X, masks):
    kinds = cfg.layer_kinds()
    drop_i = 0
    A = X
    cache = []
    out_pre = None
    for li, kind in enumerate(kinds):
        W, b = params.weights[li], params.biases[li]
        Z = A @ W.T
        mask = None
        if kind == "drop" and masks is not None:
            mask = masks[drop_i]
            Z = Z * mask
        if kind == "drop":
            drop_i += 1
        Z = Z + b
        cache.append((A, Z, mask))
        if kind == "out":
            out_pre = Z
            A = Z if cfg.output_floor is None else np.maximum(Z, cfg.output_floor)
        else:
            A = np.maximum(Z, 0.0)
    return A, out_pre, cache


def forward_batch(params: ModelParams, cfg: MLPConfig, X: np.ndarray,
                  masks=None) -> np.ndarray:
    """Forward over rows of X with optional fixed masks (None = identity)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.n_in:
        raise ShapeError(f"input shape {X.shape} incompatible with n_in={cfg.n_in}")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite input")
    check_params(params, cfg)
    out, _, _ = _forward_cached(params, cfg, X, masks)
    return out


def forward(params: ModelParams, cfg: MLPConfig, x: np.ndarray, rng=None) -> np.ndarray:
    """Single forward pass; rng=None is deterministic, otherwise fresh masks.

    Passing the same seed twice gives bit-identical outputs.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != cfg.n_in:
        raise ShapeError(f"input shape {x.shape} incompatible with n_in={cfg.n_in}")
    masks = None if rng is None else draw_masks(cfg, as_rng(rng))
    return forward_batch(params, cfg, x[None, :], masks)[0]


def forward_ensemble(params: ModelParams, cfg: MLPConfig, x: np.ndarray,
                     passes: int, rng) -> np.ndarray:
    """(passes, n_out) stochastic outputs with independent masks per pass."""
    if passes < 1:
        raise ConfigError(f"passes must be >= 1, got {passes}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != cfg.n_in:
        raise ShapeError(f"input shape {x.shape} incompatible with n_in={cfg.n_in}")
    rng = as_rng(rng)
    masks = [(rng.random((passes, cfg.width)) >= cfg.p_drop).astype(float)
             for _ in range(cfg.n_dropout)]
    X = np.broadcast_to(x, (passes, x.size))
    return forward_batch(params, cfg, X, masks)


def loss(params: ModelParams, cfg: MLPConfig, X, D, masks=None) -> float:
    """Mean over rows of the squared L2 residual, with the given masks in force."""
    D = np.asarray(D, dtype=float)
    out = forward_batch(params, cfg, X, masks)
    if out.shape != D.shape:
        raise ShapeError(f"target shape {D.shape} != output shape {out.shape}")
    r = out - D
    return float(np.sum(r * r) / X.shape[0])


def gradients(params: ModelParams, cfg: MLPConfig, X, D, masks=None):
    """Exact reverse-mode gradients of loss() for the same fixed masks.

    Returns ((dweights, dbiases), loss_value).
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.n_in:
        raise ShapeError(f"input shape {X.shape} incompatible with n_in={cfg.n_in}")
    check_params(params, cfg)
    out, out_pre, cache = _forward_cached(params, cfg, X, masks)
    if out.shape != D.shape:
        raise ShapeError(f"target shape {D.shape} != output shape {out.shape}")
    B = X.shape[0]
    r = out - D
    loss_value = float(np.sum(r * r) / B)

    kinds = cfg.layer_kinds()
    n_layers = len(kinds)
    dW = [None] * n_layers
    db = [None] * n_layers
    G = (2.0 / B) * r
    if cfg.output_floor is not None:
        G = G * (out_pre > cfg.output_floor)
    for li in range(n_layers - 1, -1, -1):
        A_prev, Z, mask = cache[li]
        if kinds[li] == "out":
            Gz = G
        else:
            Gz = G * (Z > 0.0)
        db[li] = Gz.sum(axis=0)
        Gm = Gz if mask is None else Gz * mask
        dW[li] = Gm.T @ A_prev
        G = Gm @ params.weights[li]
    return (dW, db), loss_value


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int | None = None   # None: full batch up to 256 rows, else 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")

    def resolve_batch(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 256 else 64


@dataclass(frozen=True)
class LossHistory:
    per_epoch: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "per_epoch",
                           np.ascontiguousarray(self.per_epoch, dtype=float))

    @property
    def first(self) -> float:
        return float(self.per_epoch[0])

    @property
    def final(self) -> float:
        return float(self.per_epoch[-1])

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([np.arange(self.per_epoch.size), self.per_epoch]),
                   delimiter=",", header="epoch,loss", comments="")


def train(X, D, cfg: MLPConfig, tcfg: TrainConfig) -> tuple[ModelParams, LossHistory]:
    """AdamW training; deterministic for fixed config and seed.

    Raises TrainingError with the offending epoch if the loss goes non-finite.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.n_in:
        raise ShapeError(f"input shape {X.shape} incompatible with n_in={cfg.n_in}")
    if D.ndim != 2 or D.shape != (X.shape[0], cfg.n_out):
        raise ShapeError(f"target shape {D.shape} != {(X.shape[0], cfg.n_out)}")
    n = X.shape[0]
    if n < 1:
        raise ShapeError("training set is empty")

    ss = np.random.SeedSequence([int(tcfg.seed)])
    rng_init, rng_shuffle, rng_mask = (np.random.default_rng(c) for c in ss.spawn(3))
    params = init_params(cfg, rng_init)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]

    batch = tcfg.resolve_batch(n)
    b1, b2, eps, wd, lr = tcfg.beta1, tcfg.beta2, tcfg.eps, tcfg.weight_decay, tcfg.lr
    t = 0
    history = np.empty(tcfg.epochs)
    for epoch in range(tcfg.epochs):
        perm = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            masks = draw_masks(cfg, rng_mask)
            (dW, db), L = gradients(params, cfg, X[idx], D[idx], masks)
            if not np.isfinite(L):
                raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch)
            t += 1
            c1 = 1.0 - b1 ** t
            c2 = 1.0 - b2 ** t
            for i in range(len(params.weights)):
                for theta, g, m, v in ((params.weights[i], dW[i], m_w[i], v_w[i]),
                                       (params.biases[i], db[i], m_b[i], v_b[i])):
                    m *= b1
                    m += (1 - b1) * g
                    v *= b2
                    v += (1 - b2) * g * g
                    theta -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + wd * theta)
            epoch_loss += L * idx.size
        history[epoch] = epoch_loss / n
        if not np.isfinite(history[epoch]):
            raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch)
    return params, LossHistory(history)


def save_checkpoint(params: ModelParams, cfg: MLPConfig, path) -> None:
    """Binary checkpoint: magic, version, config header, float32 LE tensors.

    Tensors are written row-major in layer order (weight then bias per
    layer); parameters are cast to float32 on write.
    """
    check_params(params, cfg)
    header = struct.pack(
        "<8sI7q2d", CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.n_in, cfg.width, cfg.n_hidden, cfg.n_dropout, cfg.n_out,
        int(cfg.dropout_first), int(cfg.output_floor is not None),
        float(cfg.p_drop),
        0.0 if cfg.output_floor is None else float(cfg.output_floor))
    with open(path, "wb") as fh:
        fh.write(header)
        for tensor in params.tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, MLPConfig]:
    """Inverse of save_checkpoint; validates magic, version and tensor sizes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head_fmt = "<8sI7q2d"
    head_size = struct.calcsize(head_fmt)
    if len(blob) < head_size:
        raise CheckpointError("checkpoint truncated before header end")
    (magic, version, n_in, width, n_hidden, n_dropout, n_out,
     dropout_first, has_floor, p_drop, floor) = struct.unpack_from(head_fmt, blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg = MLPConfig(n_in, width, n_hidden, n_dropout, n_out, p_drop,
                        floor if has_floor else None, bool(dropout_first))
    except ConfigError as exc:
        raise CheckpointError(f"invalid config in checkpoint header: {exc}") from exc
    offset = head_size
    ws, bs = [], []
    for fan_in, fan_out in cfg.layer_dims():
        for shape in ((fan_out, fan_in), (fan_out,)):
            count = int(np.prod(shape))
            nbytes = 4 * count
            if offset + nbytes > len(blob):
                raise CheckpointError("checkpoint truncated inside tensor data")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
            (ws if len(shape) == 2 else bs).append(arr.copy())
            offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after tensors")
    return ModelParams(ws, bs), cfg
