"""A small numpy network: embedding -> conv(3) -> conv(3) -> maxpool(5) -> conv(5)
-> maxpool(5) -> flatten -> dense sigmoid, with hand-written backprop,
binary cross-entropy and Adadelta.

Layer functions accept an optional leading batch axis: sequences are (T, c)
or (B, T, c), index vectors are (L,) or (B, L).
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointWriteError,
    DataError,
    IndexOutOfVocab,
    InputTooShort,
    NonFiniteGradient,
    ShapeMismatch,
    StaleCache,
)
from .seq_core import Vocabulary

PARAM_NAMES = ("E", "W1", "b1", "W2", "b2", "W3", "b3", "Wd", "bd")
BCE_EPS = 1e-7
CHECKPOINT_MAGIC = b"PSC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    conv1_filters: int = 32
    conv2_filters: int = 32
    conv3_filters: int = 32
    conv1_kernel: int = 3
    conv2_kernel: int = 3
    conv3_kernel: int = 5
    pool1_window: int = 5
    pool2_window: int = 5
    input_len: int = 1500
    dtype: str = "float64"

    def __post_init__(self):
        for f in fields(self):
            if f.name != "dtype" and getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.layer_lengths()[-1] < 1:
            raise ValueError(f"input_len {self.input_len} too short for this topology")

    def layer_lengths(self) -> tuple[int, ...]:
        """Sequence length after embedding, conv1, conv2, pool1, conv3, pool2."""
        t0 = self.input_len
        t1 = t0 - self.conv1_kernel + 1
        t2 = t1 - self.conv2_kernel + 1
        t3 = max(t2, 0) // self.pool1_window
        t4 = t3 - self.conv3_kernel + 1
        t5 = max(t4, 0) // self.pool2_window
        return (t0, t1, t2, t3, t4, t5)

    @property
    def flatten_dim(self) -> int:
        return self.layer_lengths()[-1] * self.conv3_filters

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, f1, f2, f3 = self.embed_dim, self.conv1_filters, self.conv2_filters, self.conv3_filters
        return {
            "E": (self.vocab_size + 1, d),
            "W1": (self.conv1_kernel, d, f1),
            "b1": (f1,),
            "W2": (self.conv2_kernel, f1, f2),
            "b2": (f2,),
            "W3": (self.conv3_kernel, f2, f3),
            "b3": (f3,),
            "Wd": (self.flatten_dim, 1),
            "bd": (1,),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def count_parameters(cfg: ModelConfig) -> int:
    d, f1, f2, f3 = cfg.embed_dim, cfg.conv1_filters, cfg.conv2_filters, cfg.conv3_filters
    return (
        (cfg.vocab_size + 1) * d
        + f1 * (cfg.conv1_kernel * d + 1)
        + f2 * (cfg.conv2_kernel * f1 + 1)
        + f3 * (cfg.conv3_kernel * f2 + 1)
        + (cfg.flatten_dim + 1)
    )


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform kernels, zero biases, embedding uniform in [-0.05, 0.05]."""
    shapes = cfg.param_shapes()
    params = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if name == "E":
            params[name] = rng.uniform(-0.05, 0.05, size=shape)
        elif name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            if name == "Wd":
                fan_in, fan_out = shape
            else:
                k, c_in, c_out = shape
                fan_in, fan_out = k * c_in, k * c_out
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return {k: v.astype(cfg.dtype) for k, v in params.items()}


# -- layers -----------------------------------------------------------------


def embedding_forward(indices: np.ndarray, E: np.ndarray) -> np.ndarray:
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= E.shape[0]):
        raise IndexOutOfVocab(f"token index outside [0, {E.shape[0] - 1}]")
    return E[indices]


def embedding_backward(indices: np.ndarray, d_out: np.ndarray, n_rows: int) -> np.ndarray:
    flat_idx = np.asarray(indices).ravel()
    d_flat = d_out.reshape(-1, d_out.shape[-1])
    dE = np.empty((n_rows, d_flat.shape[1]), dtype=d_out.dtype)
    for c in range(d_flat.shape[1]):
        dE[:, c] = np.bincount(flat_idx, weights=d_flat[:, c], minlength=n_rows)
    return dE


def _as_batch(x: np.ndarray) -> np.ndarray:
    return x[None] if x.ndim == 2 else x


def _im2col(X: np.ndarray, k: int) -> np.ndarray:
    """Rows t of (N, c) -> (N-k+1, k*c) holding X[t], ..., X[t+k-1] side by side."""
    n = X.shape[0] - k + 1
    return np.concatenate([X[j : j + n] for j in range(k)], axis=1)


def _conv_with_cols(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    k, c_in, c_out = W.shape
    if x.shape[-1] != c_in:
        raise ShapeMismatch(f"input has {x.shape[-1]} channels, kernel expects {c_in}")
    T = x.shape[-2]
    if T < k:
        raise InputTooShort(f"length {T} shorter than kernel {k}")
    xb = np.ascontiguousarray(_as_batch(x))
    B = xb.shape[0]
    cols = _im2col(xb.reshape(B * T, c_in), k)
    Y = np.zeros((B * T, c_out), dtype=np.result_type(xb, W))
    Y[: B * T - k + 1] = cols @ W.reshape(k * c_in, c_out)
    out = Y.reshape(B, T, c_out)[:, : T - k + 1] + b
    return (out if x.ndim == 3 else out[0]), cols


def conv1d_preactivation(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid convolution without activation.

    The batch is laid end to end as one contiguous sequence so the whole
    layer is a single matmul; rows straddling two samples are discarded.
    """
    return _conv_with_cols(x, W, b)[0]


def conv1d_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid 1D convolution followed by ReLU; output length T - k + 1."""
    return np.maximum(conv1d_preactivation(x, W, b), 0)


def conv1d_backward(x: np.ndarray, W: np.ndarray, pre: np.ndarray, d_out: np.ndarray, cols: np.ndarray | None = None):
    """Gradients (dx, dW, db) of a ReLU convolution, summed over any batch axis.

    `cols` is the unfolded input saved by the forward pass, rebuilt if omitted.
    """
    k, c_in, c_out = W.shape
    xb = np.ascontiguousarray(_as_batch(x))
    B, T, _ = xb.shape
    t_out = T - k + 1
    n = B * T - k + 1
    d_pre = _as_batch(d_out * (pre > 0))
    dY = np.zeros((B, T, c_out), dtype=d_pre.dtype)
    dY[:, :t_out] = d_pre
    dY = dY.reshape(B * T, c_out)[:n]
    if cols is None:
        cols = _im2col(xb.reshape(B * T, c_in), k)
    dW = (cols.T @ dY).reshape(k, c_in, c_out)
    d_cols = dY @ W.reshape(k * c_in, c_out).T
    dX = np.zeros((B * T, c_in), dtype=dY.dtype)
    for j in range(k):
        dX[j : j + n] += d_cols[:, j * c_in : (j + 1) * c_in]
    db = d_pre.reshape(-1, c_out).sum(axis=0)
    dx = dX.reshape(B, T, c_in)
    return (dx if x.ndim == 3 else dx[0]), dW, db


def embed_conv_preactivation(indices: np.ndarray, E: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """conv1d_preactivation(embedding_forward(indices, E), W, b) without building the embedding.

    Each tap of the first convolution only sees a token index, so the product
    E @ W[j] is tabulated once per tap and gathered.
    """
    idx = np.atleast_2d(indices)
    k = W.shape[0]
    B, T = idx.shape
    if T < k:
        raise InputTooShort(f"length {T} shorter than kernel {k}")
    if idx.min() < 0 or idx.max() >= E.shape[0]:
        raise IndexOutOfVocab(f"token index outside [0, {E.shape[0] - 1}]")
    flat = idx.reshape(-1)
    n = B * T - k + 1
    table = np.einsum("vi,jio->jvo", E, W)
    Y = np.zeros((B * T, W.shape[2]), dtype=table.dtype)
    for j in range(k):
        Y[:n] += table[j][flat[j : j + n]]
    out = Y.reshape(B, T, -1)[:, : T - k + 1] + b
    return out if np.ndim(indices) == 2 else out[0]


def embed_conv_backward(indices: np.ndarray, E: np.ndarray, W: np.ndarray, pre: np.ndarray, d_out: np.ndarray):
    """Gradients (dE, dW, db) for `embed_conv_preactivation` followed by ReLU."""
    idx = np.atleast_2d(indices)
    k, _, c_out = W.shape
    B, T = idx.shape
    n = B * T - k + 1
    d_pre = _as_batch(d_out * (pre > 0))
    dY = np.zeros((B, T, c_out), dtype=d_pre.dtype)
    dY[:, : T - k + 1] = d_pre
    dY = dY.reshape(B * T, c_out)[:n]
    onehot = np.zeros((B * T, E.shape[0]), dtype=dY.dtype)
    onehot[np.arange(B * T), idx.reshape(-1)] = 1.0
    dE = np.zeros_like(E, dtype=dY.dtype)
    dW = np.empty(W.shape, dtype=dY.dtype)
    for j in range(k):
        # per-token sums of the upstream gradient seen through tap j
        d_table = onehot[j : j + n].T @ dY
        dW[j] = E.T @ d_table
        dE += d_table @ W[j].T
    db = d_pre.reshape(-1, c_out).sum(axis=0)
    return dE, dW, db


def maxpool1d(x: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling; a trailing remainder shorter than `w` is dropped.

    Returns the pooled values and, per output cell, the input position of the
    first maximum in its window.
    """
    T, c = x.shape[-2:]
    if T < w:
        raise InputTooShort(f"length {T} shorter than pooling window {w}")
    n = T // w
    blocks = x[..., : n * w, :].reshape(*x.shape[:-2], n, w, c)
    rel = blocks.argmax(axis=-2)
    out = np.take_along_axis(blocks, rel[..., None, :], axis=-2)[..., 0, :]
    return out, rel + (np.arange(n) * w)[:, None]


def maxpool1d_backward(d_out: np.ndarray, argmax: np.ndarray, T: int) -> np.ndarray:
    dx = np.zeros((*d_out.shape[:-2], T, d_out.shape[-1]), dtype=d_out.dtype)
    np.put_along_axis(dx, argmax, d_out, axis=-2)
    return dx


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def dense_sigmoid_forward(x: np.ndarray, Wd: np.ndarray, bd: np.ndarray):
    """Returns (p, z) for flattened features x of shape (F,) or (B, F)."""
    if x.shape[-1] != Wd.shape[0]:
        raise ShapeMismatch(f"flattened input has {x.shape[-1]} features, dense layer expects {Wd.shape[0]}")
    z = x @ Wd[:, 0] + bd[0]
    return sigmoid(z), z


def bce_loss(p, y):
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce_grad(p, y):
    """dL/dp on the clamped probability."""
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return -y / p + (1 - y) / (1 - p)


# -- model --------------------------------------------------------------------


@dataclass
class ForwardCache:
    indices: np.ndarray
    pre1: np.ndarray
    a1: np.ndarray
    pre2: np.ndarray
    cols2: np.ndarray
    a2: np.ndarray
    arg1: np.ndarray
    h1: np.ndarray
    pre3: np.ndarray
    cols3: np.ndarray
    a3: np.ndarray
    arg2: np.ndarray
    flat: np.ndarray
    z: np.ndarray
    p: np.ndarray
    shapes: dict = field(default_factory=dict)


def _check_params(cfg: ModelConfig, params: dict) -> None:
    for name, shape in cfg.param_shapes().items():
        if params[name].shape != shape:
            raise ShapeMismatch(f"{name} has shape {params[name].shape}, config implies {shape}")


def forward(cfg: ModelConfig, params: dict, indices: np.ndarray):
    """Probability of the "real" class for one (L,) or a batch (B, L) of encoded samples."""
    indices = np.asarray(indices)
    single = indices.ndim == 1
    if single:
        indices = indices[None]
    if indices.shape[-1] != cfg.input_len:
        raise ShapeMismatch(f"sample length {indices.shape[-1]} != input_len {cfg.input_len}")
    pre1 = embed_conv_preactivation(indices, params["E"], params["W1"], params["b1"])
    a1 = np.maximum(pre1, 0)
    pre2, cols2 = _conv_with_cols(a1, params["W2"], params["b2"])
    a2 = np.maximum(pre2, 0)
    h1, arg1 = maxpool1d(a2, cfg.pool1_window)
    pre3, cols3 = _conv_with_cols(h1, params["W3"], params["b3"])
    a3 = np.maximum(pre3, 0)
    h2, arg2 = maxpool1d(a3, cfg.pool2_window)
    flat = h2.reshape(h2.shape[0], -1)
    p, z = dense_sigmoid_forward(flat, params["Wd"], params["bd"])
    p = np.atleast_1d(p)
    cache = ForwardCache(
        indices, pre1, a1, pre2, cols2, a2, arg1, h1, pre3, cols3, a3, arg2, flat, z, p,
        shapes={k: v.shape for k, v in params.items()},
    )
    return (float(p[0]) if single else p), cache


def backward(cfg: ModelConfig, params: dict, cache: ForwardCache, y) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean BCE loss with respect to every parameter.

    The sigmoid/BCE pair is differentiated in logit form, dL/dz = p - y.
    """
    if cache.shapes != {k: v.shape for k, v in params.items()}:
        raise StaleCache("parameter shapes changed since the forward pass")
    y = np.atleast_1d(np.asarray(y, dtype=cache.p.dtype))
    B = cache.p.shape[0]
    if y.shape != (B,):
        raise StaleCache(f"{y.shape[0]} labels for a cached batch of {B}")
    dz = ((cache.p - y) / B).astype(params["Wd"].dtype)
    grads = {
        "Wd": (cache.flat.T @ dz)[:, None],
        "bd": np.array([dz.sum()]),
    }
    d_h2 = (dz[:, None] * params["Wd"][:, 0]).reshape(cache.arg2.shape)
    d_a3 = maxpool1d_backward(d_h2, cache.arg2, cache.a3.shape[-2])
    d_h1, grads["W3"], grads["b3"] = conv1d_backward(cache.h1, params["W3"], cache.pre3, d_a3, cache.cols3)
    d_a2 = maxpool1d_backward(d_h1, cache.arg1, cache.a2.shape[-2])
    d_a1, grads["W2"], grads["b2"] = conv1d_backward(cache.a1, params["W2"], cache.pre2, d_a2, cache.cols2)
    grads["E"], grads["W1"], grads["b1"] = embed_conv_backward(cache.indices, params["E"], params["W1"], cache.pre1, d_a1)
    return {k: grads[k].astype(params[k].dtype, copy=False) for k in PARAM_NAMES}


def batch_loss(cfg: ModelConfig, params: dict, indices: np.ndarray, labels) -> float:
    p, _ = forward(cfg, params, indices)
    return float(np.mean(bce_loss(np.atleast_1d(p), np.atleast_1d(labels))))


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdadeltaState:
    eg2: dict[str, np.ndarray]
    edx2: dict[str, np.ndarray]
    rho: float = 0.95
    lr: float = 1.0
    eps: float = 1e-6
    steps: int = 0

    @classmethod
    def zeros_like(cls, params: dict, rho: float = 0.95, lr: float = 1.0, eps: float = 1e-6) -> "AdadeltaState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            rho, lr, eps,
        )


def adadelta_step(params: dict, grads: dict, state: AdadeltaState):
    """One in-place Adadelta update; returns (params, state).

    Eg2  <- rho Eg2 + (1 - rho) g^2
    dx   <- -lr sqrt(Edx2 + eps) / sqrt(Eg2 + eps) g
    Edx2 <- rho Edx2 + (1 - rho) dx^2
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
    rho, eps = state.rho, state.eps
    for name, g in grads.items():
        eg2 = state.eg2[name]
        edx2 = state.edx2[name]
        eg2 *= rho
        eg2 += (1 - rho) * g * g
        delta = -state.lr * np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += (1 - rho) * delta * delta
        params[name] += delta
    state.steps += 1
    return params, state


# -- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    state: AdadeltaState
    vocab: Vocabulary
    epoch: int = 0
    val_acc: float | None = None
    extra: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": "PSC",
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "vocabulary": [[code, i] for code, i in self.vocab.items()],
            "epoch": self.epoch,
            "val_acc": self.val_acc,
            "optimizer": {"name": "adadelta", "rho": self.state.rho, "lr": self.state.lr,
                          "eps": self.state.eps, "steps": self.state.steps},
            "tensors": [[f"{group}{name}", list(self.params[name].shape)]
                        for group in ("", "Eg2:", "Edx2:") for name in PARAM_NAMES],
            **self.extra,
        }


def _tensor_order(ckpt: Checkpoint):
    yield from (ckpt.params[n] for n in PARAM_NAMES)
    yield from (ckpt.state.eg2[n] for n in PARAM_NAMES)
    yield from (ckpt.state.edx2[n] for n in PARAM_NAMES)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write magic, u32 header length, JSON header, then float64 LE tensors; atomic replace."""
    header = json.dumps(ckpt.header(), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for arr in _tensor_order(ckpt):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
    return header, 8 + n


def load_checkpoint(path) -> Checkpoint:
    try:
        header, offset = read_checkpoint_header(path)
        data = Path(path).read_bytes()[offset:]
    except (OSError, ValueError, struct.error) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary(code for code, _ in header["vocabulary"])
    if vocab.items() != [tuple(x) for x in header["vocabulary"]]:
        raise DataError(f"{path}: inconsistent vocabulary")
    shapes = cfg.param_shapes()
    groups: list[dict] = [{}, {}, {}]
    pos = 0
    for group in groups:
        for name in PARAM_NAMES:
            n = int(np.prod(shapes[name]))
            chunk = data[pos : pos + 8 * n]
            if len(chunk) != 8 * n:
                raise DataError(f"{path}: truncated tensor data")
            group[name] = np.frombuffer(chunk, dtype="<f8").reshape(shapes[name]).astype(cfg.dtype)
            pos += 8 * n
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes after tensor data")
    opt = header["optimizer"]
    state = AdadeltaState(groups[1], groups[2], opt["rho"], opt["lr"], opt["eps"], opt["steps"])
    known = {"format", "version", "config", "vocabulary", "epoch", "val_acc", "optimizer", "tensors"}
    extra = {k: v for k, v in header.items() if k not in known}
    return Checkpoint(cfg, groups[0], state, vocab, header["epoch"], header["val_acc"], extra)
