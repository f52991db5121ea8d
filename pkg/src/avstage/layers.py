"""Neural building blocks: parameter store, transformer/conformer layers,
convolutional subsampling, and sinusoidal positional embeddings.

All layers are thin objects that register named parameters in a shared
`ParamTree` at construction and build an autodiff graph when called.
Inputs are batch-first: sequences are (B, T, D) tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import derive_rng


@dataclass(frozen=True)
class EncoderConfig:
    """Size of one encoder stack."""

    layers: int
    heads: int
    dim: int
    conv_kernel: int = 7
    ff_mult: int = 4

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.conv_kernel % 2 != 1:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")


def truncated_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0):
    """Normal(0, std) resampled until all values lie within bound*std."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(out) > bound * std
        if not bad.any():
            return out
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))


class ParamTree:
    """Named, shaped parameters with trainable/frozen tags.

    Parameter values are seeded from (seed, path) so that construction
    order never affects initialization.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, path: str, shape, init: str = "trunc_normal", trainable: bool = True) -> Tensor:
        if path in self._params:
            raise ValueError(f"duplicate parameter path {path!r}")
        if init == "trunc_normal":
            data = truncated_normal(derive_rng(self.seed, "init", path), shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(np.ascontiguousarray(data, dtype=self.dtype))
        self._params[path] = t
        self._trainable[path] = trainable
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def trainable_items(self):
        for path in self.paths():
            if self._trainable[path]:
                yield path, self._params[path]

    def is_trainable(self, path: str) -> bool:
        return self._trainable[path]

    def freeze(self, prefix: str = "") -> int:
        """Mark every parameter under `prefix` frozen; returns the count."""
        n = 0
        for path in self._params:
            if path.startswith(prefix):
                self._trainable[path] = False
                n += 1
        return n

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        """Overwrite matching parameters in place; shapes must agree."""
        loaded = 0
        for path, value in arrays.items():
            if not path.startswith(prefix):
                continue
            if path not in self._params:
                continue
            t = self._params[path]
            if t.data.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {path!r}: have {t.data.shape}, got {value.shape}"
                )
            t.data = np.ascontiguousarray(value, dtype=self.dtype)
            loaded += 1
        return loaded


class Linear:
    def __init__(self, tree: ParamTree, path: str, d_in: int, d_out: int, bias=True):
        self.w = tree.add(f"{path}.w", (d_in, d_out))
        self.b = tree.add(f"{path}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, tree: ParamTree, path: str, dim: int, eps: float = 1e-6):
        self.gamma = tree.add(f"{path}.gamma", (dim,), init="ones")
        self.beta = tree.add(f"{path}.beta", (dim,), init="zeros")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        y = xc / (var + self.eps).sqrt()
        return y * self.gamma + self.beta


class MultiHeadAttention:
    """Scaled dot-product attention; self- or cross-attention.

    `mask` is an additive constant array broadcastable to the score shape
    (B, heads, Tq, Tk); masked-out positions carry a large negative value.
    """

    def __init__(self, tree: ParamTree, path: str, dim: int, heads: int):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.dim = dim
        self.wq = Linear(tree, f"{path}.q", dim, dim)
        self.wk = Linear(tree, f"{path}.k", dim, dim)
        self.wv = Linear(tree, f"{path}.v", dim, dim)
        self.wo = Linear(tree, f"{path}.out", dim, dim)

    def _split(self, x: Tensor, b, t):
        dh = self.dim // self.heads
        return x.reshape(b, t, self.heads, dh).transpose((0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor | None = None, mask=None) -> Tensor:
        kv_in = q_in if kv_in is None else kv_in
        b, tq, _ = q_in.shape
        tk = kv_in.shape[1]
        dh = self.dim // self.heads
        q = self._split(self.wq(q_in), b, tq)
        k = self._split(self.wk(kv_in), b, tk)
        v = self._split(self.wv(kv_in), b, tk)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        attn = ad.softmax(scores, axis=-1)
        mixed = (attn @ v).transpose((0, 2, 1, 3)).reshape(b, tq, self.dim)
        return self.wo(mixed)


def causal_mask(t: int, dtype=np.float32, big: float = 1e9) -> np.ndarray:
    """(1, 1, t, t) additive mask hiding positions after the query index."""
    m = np.triu(np.full((t, t), -big, dtype=dtype), k=1)
    return m[None, None]


def key_padding_mask(valid: np.ndarray, t: int, dtype=np.float32, big: float = 1e9) -> np.ndarray:
    """(B, 1, 1, t) additive mask hiding keys at or beyond each valid length."""
    pos = np.arange(t)
    m = np.where(pos[None, :] < np.asarray(valid)[:, None], 0.0, -big).astype(dtype)
    return m[:, None, None, :]


class DepthwiseConv1d:
    """Per-channel temporal convolution, odd kernel, same padding."""

    def __init__(self, tree: ParamTree, path: str, dim: int, kernel: int):
        if kernel % 2 != 1:
            raise ValueError("depthwise kernel must be odd")
        self.kernel = kernel
        self.w = tree.add(f"{path}.w", (kernel, dim))
        self.b = tree.add(f"{path}.b", (dim,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        p = self.kernel // 2
        zeros = Tensor(np.zeros((b, p, d), dtype=x.dtype))
        xp = ad.concatenate([zeros, x, zeros], axis=1)
        idx = np.arange(t)[:, None] + np.arange(self.kernel)[None, :]
        frames = ad.take(xp, idx, axis=1)  # (B, T, K, D)
        w = self.w.reshape(1, 1, self.kernel, d)
        return (frames * w).sum(axis=2) + self.b


class ConvSubsample:
    """Strided 1-D convolution over feature frames with same padding.

    Output length is ceil(T / stride); with the default stride of 4 a
    padded 1000-frame input yields exactly 250 outputs.
    """

    def __init__(self, tree: ParamTree, path: str, d_in: int, d_out: int,
                 kernel: int = 7, stride: int = 4):
        self.kernel = kernel
        self.stride = stride
        self.d_in = d_in
        self.w = tree.add(f"{path}.w", (kernel * d_in, d_out))
        self.b = tree.add(f"{path}.b", (d_out,), init="zeros")

    def output_length(self, t: int) -> int:
        return -(-t // self.stride)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, f = x.shape
        out_t = self.output_length(t)
        pad_total = max((out_t - 1) * self.stride + self.kernel - t, 0)
        pl = pad_total // 2
        pr = pad_total - pl
        parts = []
        if pl:
            parts.append(Tensor(np.zeros((b, pl, f), dtype=x.dtype)))
        parts.append(x)
        if pr:
            parts.append(Tensor(np.zeros((b, pr, f), dtype=x.dtype)))
        xp = ad.concatenate(parts, axis=1) if len(parts) > 1 else x
        idx = np.arange(out_t)[:, None] * self.stride + np.arange(self.kernel)[None, :]
        frames = ad.take(xp, idx, axis=1)  # (B, out_t, K, F)
        return frames.reshape(b, out_t, self.kernel * f) @ self.w + self.b


def positional_embedding(seq_len: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal positions, (seq_len, dim); even dims sin, odd dims cos."""
    if dim % 2 != 0:
        raise ValueError("positional embedding dim must be even")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    inv = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.empty((seq_len, dim))
    pe[:, 0::2] = np.sin(pos * inv)
    pe[:, 1::2] = np.cos(pos * inv)
    return pe.astype(dtype)


def split_3d_dims(dim: int) -> tuple[int, int, int]:
    """Partition `dim` into even per-axis chunks (t, h, w), remainder to t."""
    w = 2 * (dim // 6)
    h = w
    t = dim - h - w
    if w < 2 or t < 2 or t % 2:
        raise ValueError(f"dim {dim} cannot be split into three even sinusoid chunks")
    return t, h, w


def positional_embedding_3d(grid: tuple[int, int, int], dim: int, dtype=np.float64) -> np.ndarray:
    """Spatio-temporal sinusoids over a (t, h, w) grid, flattened t-major.

    Row order matches the voxel token layout: t-block outermost, then h,
    then w. Each axis gets an even slice of `dim`.
    """
    nt, nh, nw = grid
    dt, dh, dw = split_3d_dims(dim)
    pt = positional_embedding(nt, dt)
    ph = positional_embedding(nh, dh)
    pw = positional_embedding(nw, dw)
    rows = np.empty((nt * nh * nw, dim))
    i = 0
    for a in range(nt):
        for b in range(nh):
            for c in range(nw):
                rows[i, :dt] = pt[a]
                rows[i, dt : dt + dh] = ph[b]
                rows[i, dt + dh :] = pw[c]
                i += 1
    return rows.astype(dtype)


class FeedForward:
    def __init__(self, tree: ParamTree, path: str, dim: int, mult: int, act: str = "silu"):
        self.norm = LayerNorm(tree, f"{path}.norm", dim)
        self.lin1 = Linear(tree, f"{path}.lin1", dim, mult * dim)
        self.lin2 = Linear(tree, f"{path}.lin2", mult * dim, dim)
        self.act = {"silu": ad.silu, "gelu": ad.gelu}[act]

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.act(self.lin1(self.norm(x))))


class ConformerBlock:
    """Macaron block: half FF, self-attention, depthwise conv, half FF, norm.

    The convolution module uses layer norm where the original design uses
    batch norm; desk-scale batches are too small for stable batch statistics.
    """

    def __init__(self, tree: ParamTree, path: str, cfg: EncoderConfig):
        d = cfg.dim
        self.ff1 = FeedForward(tree, f"{path}.ff1", d, cfg.ff_mult)
        self.attn_norm = LayerNorm(tree, f"{path}.attn_norm", d)
        self.attn = MultiHeadAttention(tree, f"{path}.attn", d, cfg.heads)
        self.conv_norm = LayerNorm(tree, f"{path}.conv_norm", d)
        self.conv_pw1 = Linear(tree, f"{path}.conv_pw1", d, 2 * d)
        self.conv_dw = DepthwiseConv1d(tree, f"{path}.conv_dw", d, cfg.conv_kernel)
        self.conv_mid_norm = LayerNorm(tree, f"{path}.conv_mid_norm", d)
        self.conv_pw2 = Linear(tree, f"{path}.conv_pw2", d, d)
        self.ff2 = FeedForward(tree, f"{path}.ff2", d, cfg.ff_mult)
        self.final_norm = LayerNorm(tree, f"{path}.final_norm", d)
        self.dim = d

    def _conv_module(self, x: Tensor) -> Tensor:
        y = self.conv_pw1(self.conv_norm(x))
        a, b = y[..., : self.dim], y[..., self.dim :]
        y = a * ad.sigmoid(b)  # gated linear unit
        y = self.conv_dw(y)
        y = ad.silu(self.conv_mid_norm(y))
        return self.conv_pw2(y)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.ff1(x) * 0.5
        x = x + self.attn(self.attn_norm(x), mask=mask)
        x = x + self._conv_module(x)
        x = x + self.ff2(x) * 0.5
        return self.final_norm(x)


class ViTBlock:
    """Pre-norm transformer block with a GELU MLP."""

    def __init__(self, tree: ParamTree, path: str, dim: int, heads: int, ff_mult: int = 4):
        self.norm1 = LayerNorm(tree, f"{path}.norm1", dim)
        self.attn = MultiHeadAttention(tree, f"{path}.attn", dim, heads)
        self.norm2 = LayerNorm(tree, f"{path}.norm2", dim)
        self.lin1 = Linear(tree, f"{path}.mlp1", dim, ff_mult * dim)
        self.lin2 = Linear(tree, f"{path}.mlp2", ff_mult * dim, dim)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask=mask)
        return x + self.lin2(ad.gelu(self.lin1(self.norm2(x))))
