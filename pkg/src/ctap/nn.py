"""A small numpy neural-network engine.

Two-layer temporal convolution stacks and two-layer dense stacks with exact
manual backward passes, BCE / L1 losses, Adam, a named-tensor checkpoint
container and a finite-difference gradient checker. All arithmetic is float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = dict[str, np.ndarray]

PROB_EPS = 1e-7


def sigmoid(x):
    # tanh form stays finite for any input
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def relu(x):
    return np.maximum(x, 0.0)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def init_temporal_conv(rng, d_in: int, d_out: int, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"temporal kernel size must be odd, got {k}")
    return glorot_uniform(rng, (d_in, d_out, k), d_in * k, d_out * k), np.zeros(d_out)


def conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Stride-1, same-padded temporal convolution.

    x: (B, T, d_in); W: (d_in, d_out, k); b: (d_out,). Returns (B, T, d_out) and a cache.
    """
    if x.ndim != 3 or x.shape[2] != W.shape[0]:
        raise ValueError(f"conv input shape {x.shape} does not match kernel {W.shape}")
    B, T, d_in = x.shape
    k = W.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
    win = sliding_window_view(xp, k, axis=1).reshape(B * T, d_in * k)  # (d_in, k) flattened per step
    Wm = W.transpose(0, 2, 1).reshape(d_in * k, -1)
    y = (win @ Wm).reshape(B, T, -1) + b
    return y, win


def conv_backward(gy: np.ndarray, W: np.ndarray, win: np.ndarray):
    B, T, d_out = gy.shape
    d_in, _, k = W.shape
    p = k // 2
    gflat = gy.reshape(B * T, d_out)
    Wm = W.transpose(0, 2, 1).reshape(d_in * k, d_out)
    gW = (win.T @ gflat).reshape(d_in, k, d_out).transpose(0, 2, 1)
    gb = gflat.sum(axis=0)
    gwin = (gflat @ Wm.T).reshape(B, T, d_in, k)
    gxp = np.zeros((B, T + 2 * p, d_in))
    for j in range(k):
        gxp[:, j:j + T, :] += gwin[:, :, :, j]
    return gxp[:, p:p + T, :], gW, gb


class TConv2:
    """conv -> ReLU -> conv -> optional sigmoid, over named entries of a shared param dict."""

    def __init__(self, params: Params, prefix: str):
        self.params = params
        self.prefix = prefix
        self._cache = None

    @staticmethod
    def init(params: Params, prefix: str, rng, d_in: int, d_mid: int, d_out: int = 1, k: int = 3) -> "TConv2":
        params[prefix + "conv1.W"], params[prefix + "conv1.b"] = init_temporal_conv(rng, d_in, d_mid, k)
        params[prefix + "conv2.W"], params[prefix + "conv2.b"] = init_temporal_conv(rng, d_mid, d_out, k)
        return TConv2(params, prefix)

    def _p(self, name):
        return self.params[self.prefix + name]

    @property
    def names(self) -> list[str]:
        return [self.prefix + n for n in ("conv1.W", "conv1.b", "conv2.W", "conv2.b")]

    def forward(self, x: np.ndarray, final_activation: Optional[str] = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        h_pre, win1 = conv_forward(x, self._p("conv1.W"), self._p("conv1.b"))
        h = relu(h_pre)
        o, win2 = conv_forward(h, self._p("conv2.W"), self._p("conv2.b"))
        if final_activation == "sigmoid":
            out = sigmoid(o)
        elif final_activation is None:
            out = o
        else:
            raise ValueError(f"unknown final activation {final_activation!r}")
        self._cache = (h_pre, win1, win2, out, final_activation)
        return out

    @property
    def kink_args(self) -> np.ndarray:
        """ReLU pre-activations of the last forward pass."""
        if self._cache is None:
            raise RuntimeError("backward/kinks requested before forward")
        return self._cache[0].ravel()

    def backward(self, gout: np.ndarray) -> tuple[Params, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        h_pre, win1, win2, out, act = self._cache
        g = np.asarray(gout, dtype=np.float64).reshape(out.shape)
        if act == "sigmoid":
            g = g * out * (1.0 - out)
        gh, gW2, gb2 = conv_backward(g, self._p("conv2.W"), win2)
        gh = gh * (h_pre > 0)
        gx, gW1, gb1 = conv_backward(gh, self._p("conv1.W"), win1)
        grads = dict(zip(self.names, (gW1, gb1, gW2, gb2)))
        return grads, gx


class Dense2:
    """dense -> ReLU -> dense -> optional sigmoid."""

    def __init__(self, params: Params, prefix: str):
        self.params = params
        self.prefix = prefix
        self._cache = None

    @staticmethod
    def init(params: Params, prefix: str, rng, d_in: int, d_mid: int, d_out: int = 1) -> "Dense2":
        params[prefix + "dense1.W"] = glorot_uniform(rng, (d_in, d_mid), d_in, d_mid)
        params[prefix + "dense1.b"] = np.zeros(d_mid)
        params[prefix + "dense2.W"] = glorot_uniform(rng, (d_mid, d_out), d_mid, d_out)
        params[prefix + "dense2.b"] = np.zeros(d_out)
        return Dense2(params, prefix)

    def _p(self, name):
        return self.params[self.prefix + name]

    @property
    def names(self) -> list[str]:
        return [self.prefix + n for n in ("dense1.W", "dense1.b", "dense2.W", "dense2.b")]

    def forward(self, x: np.ndarray, final_activation: Optional[str] = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self._p("dense1.W").shape[0]:
            raise ValueError(f"dense input dim {x.shape[1]} != {self._p('dense1.W').shape[0]}")
        h_pre = x @ self._p("dense1.W") + self._p("dense1.b")
        h = relu(h_pre)
        o = h @ self._p("dense2.W") + self._p("dense2.b")
        out = sigmoid(o) if final_activation == "sigmoid" else o
        self._cache = (x, h_pre, h, out, final_activation)
        return out

    @property
    def kink_args(self) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward/kinks requested before forward")
        return self._cache[1].ravel()

    def backward(self, gout: np.ndarray) -> tuple[Params, np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        x, h_pre, h, out, act = self._cache
        g = np.asarray(gout, dtype=np.float64).reshape(out.shape)
        if act == "sigmoid":
            g = g * out * (1.0 - out)
        gW2 = h.T @ g
        gb2 = g.sum(axis=0)
        gh = (g @ self._p("dense2.W").T) * (h_pre > 0)
        gW1 = x.T @ gh
        gb1 = gh.sum(axis=0)
        gx = gh @ self._p("dense1.W").T
        return dict(zip(self.names, (gW1, gb1, gW2, gb2))), gx


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_loss(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over every element; returns (loss, dloss/dp)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"bce shape mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    n = p.size
    loss = -np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) / n
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    grad = np.where(inside, -(y / pc - (1.0 - y) / (1.0 - pc)) / n, 0.0)
    return float(loss), grad


def l1_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed per-sample L1 over masked rows, divided by the number of masked rows.

    pred/target: (N, m); mask: (N,). Zero loss and gradient when nothing is masked;
    the subgradient at 0 is 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n_pos = int(mask.sum())
    if n_pos == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    m = mask.reshape(-1, *([1] * (pred.ndim - 1)))
    loss = float(np.sum(np.abs(diff) * m) / n_pos)
    return loss, np.sign(diff) * m / n_pos


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        """In-place update of every parameter that has a gradient."""
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"CTAPCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Params, hyper: dict) -> None:
    """Layout: magic, u32 version, u32 hyper-json length, json, u32 count,
    then per tensor (sorted by name): u16 name length, name, u32 ndim,
    u32 dims, little-endian f64 data."""
    meta = json.dumps(hyper, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[Params, dict]:
    raw = Path(path).read_bytes()
    try:
        if raw[:8] != CKPT_MAGIC:
            raise CheckpointError("bad magic")
        version, meta_len = struct.unpack_from("<II", raw, 8)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 16
        hyper = json.loads(raw[off:off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(raw):
                raise CheckpointError(f"truncated tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
        if off != len(raw):
            raise CheckpointError("trailing bytes after last tensor")
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return tensors, hyper


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    worst: str = ""


LossFn = Callable[[Params], tuple[float, Params, np.ndarray]]


def check_gradients(fn: LossFn, params: Params, h: float = 1e-5, names=None, floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``fn(params)`` returns ``(loss, grads, kink_args)`` where ``kink_args`` holds every
    ReLU pre-activation / L1 residual. A coordinate is excluded when a kink argument
    sits within 1e-6 of zero or changes sign under the +-h perturbation.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, grads, base_kinks = fn(params)
    base_sign = np.sign(base_kinks)
    near_kink = np.abs(base_kinks) < 1e-6
    worst, worst_at = 0.0, ""
    checked = excluded = 0
    for name in names or sorted(params):
        p = params[name]
        a = grads.get(name, np.zeros_like(p))
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _, kp = fn(params)
            p[idx] = old - h
            lm, _, km = fn(params)
            p[idx] = old
            moved = (np.sign(kp) != base_sign) | (np.sign(km) != base_sign)
            if np.any(moved) or np.any(near_kink & ((kp != base_kinks) | (km != base_kinks))):
                excluded += 1
                continue
            num = (lp - lm) / (2 * h)
            rel = abs(a[idx] - num) / max(abs(a[idx]), abs(num), floor)
            checked += 1
            if rel > worst:
                worst, worst_at = rel, f"{name}{list(idx)}"
    return GradCheckReport(worst, checked, excluded, worst_at)


class Model:
    """Parameter dict + hyperparameter record, persisted through the checkpoint container."""

    kind = "model"

    def __init__(self, params: Params, hyper: dict):
        self.params = params
        self.hyper = dict(hyper)

    def save(self, path) -> None:
        save_checkpoint(path, self.params, {"kind": self.kind, **self.hyper})

    @classmethod
    def load(cls, path):
        tensors, hyper = load_checkpoint(path)
        kind = hyper.pop("kind", None)
        if kind != cls.kind:
            raise CheckpointError(f"{path} holds a {kind!r} model, expected {cls.kind!r}")
        return cls(tensors, hyper)

    def zero_(self):
        for p in self.params.values():
            p[...] = 0.0
        return self


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.005
    epochs: int = 10
    seed: int = 0


def minibatches(rng: np.random.Generator, n: int, batch_size: int):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]
