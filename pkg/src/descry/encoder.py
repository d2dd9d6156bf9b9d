"""Small fully-convolutional descriptor network with exact numpy gradients.

Recipe: conv3x3 3->16 s2, ReLU, conv3x3 16->32 s2, ReLU, conv3x3 32->32 s1,
ReLU, conv1x1 32->D, bilinear upsample x4 back to input size, per-pixel L2
normalization. All convs use channels-last (H, W, C) layout and im2col.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Image, Rng

NORM_EPS = 1e-8

# (kernel, stride, pad, in_ch, out_ch or None for D)
_RECIPE = [
    (3, 2, 1, 3, 16),
    (3, 2, 1, 16, 32),
    (3, 1, 1, 32, 32),
    (1, 1, 0, 32, None),
]
UPSAMPLE = 4


class CheckpointFormatError(ValueError):
    """Bad magic, version or truncation in a checkpoint file."""


@dataclass
class EncoderParams:
    """Per-layer weights (kh, kw, cin, cout) and biases (cout,)."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    dim: int

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dim
        )

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.dim,
        )


@dataclass(frozen=True)
class DescriptorImage:
    """Unit-norm D-vector per pixel, shape (H, W, D)."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def at(self, u: int, v: int) -> np.ndarray:
        return self.data[v, u]


def layer_shapes(dim: int) -> List[Tuple[int, int, int, int]]:
    return [(k, k, cin, cout if cout is not None else dim) for k, _, _, cin, cout in _RECIPE]


def init(dim: int, rng: Rng, dtype=np.float32) -> EncoderParams:
    """Glorot-uniform weights, zero biases."""
    if dim < 2:
        raise ValueError(f"descriptor dim must be >= 2, got {dim}")
    weights, biases = [], []
    for kh, kw, cin, cout in layer_shapes(dim):
        fan_in = kh * kw * cin
        fan_out = kh * kw * cout
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.np.uniform(-a, a, size=(kh, kw, cin, cout)).astype(dtype))
        biases.append(np.zeros(cout, dtype=dtype))
    return EncoderParams(weights=weights, biases=biases, dim=dim)


def _conv_forward(x, w, b, stride, pad):
    kh, kw, cin, cout = w.shape
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw, cin))[::stride, ::stride, 0]
    hout, wout = win.shape[:2]
    cols = win.reshape(hout * wout, kh * kw * cin)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(hout, wout, cout), cols


def _conv_backward(dout, cols, w, stride, pad, in_shape):
    kh, kw, cin, cout = w.shape
    hout, wout = dout.shape[:2]
    dflat = dout.reshape(hout * wout, cout)
    dw = (cols.T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(kh * kw * cin, cout).T).reshape(hout, wout, kh, kw, cin)
    h, wd = in_shape[:2]
    dxp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[i : i + stride * hout : stride, j : j + stride * wout : stride] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[pad:-pad, pad:-pad]
    return dxp, dw, db


_upsample_cache: dict = {}


def _upsample_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Dense (factor*n_in, n_in) bilinear interpolation matrix, edge-clamped."""
    key = (n_in, factor, np.dtype(dtype).str)
    if key in _upsample_cache:
        return _upsample_cache[key]
    n_out = factor * n_in
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), i0] += 1.0 - w
    m[np.arange(n_out), i1] += w
    _upsample_cache[key] = m
    return m


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]  # input to each conv
    cols: List[np.ndarray]
    preacts: List[np.ndarray]  # pre-ReLU outputs of layers 0..2
    pre_upsample: np.ndarray
    pre_norm: np.ndarray
    norms: np.ndarray


def forward(params: EncoderParams, img: Image) -> Tuple[DescriptorImage, ForwardCache]:
    """Descriptor image plus the cache needed for backward."""
    h, w = img.height, img.width
    if h % UPSAMPLE or w % UPSAMPLE:
        raise ValueError(f"input dims must be divisible by {UPSAMPLE}, got {w}x{h}")
    x = img.data.astype(params.dtype)
    inputs, cols_all, preacts = [], [], []
    for li, (k, stride, pad, cin, _) in enumerate(_RECIPE):
        inputs.append(x)
        out, cols = _conv_forward(x, params.weights[li], params.biases[li], stride, pad)
        cols_all.append(cols)
        if li < len(_RECIPE) - 1:
            preacts.append(out)
            x = np.maximum(out, 0.0)
        else:
            x = out
    pre_up = x
    my = _upsample_matrix(pre_up.shape[0], UPSAMPLE, params.dtype)
    mx = _upsample_matrix(pre_up.shape[1], UPSAMPLE, params.dtype)
    up = np.tensordot(my, pre_up, axes=(1, 0))
    up = np.tensordot(mx, up, axes=(1, 1)).transpose(1, 0, 2)
    norms = np.linalg.norm(up, axis=2)
    desc = up / (norms + NORM_EPS)[:, :, None]
    assert np.isfinite(desc).all(), "non-finite descriptor output"
    cache = ForwardCache(
        inputs=inputs,
        cols=cols_all,
        preacts=preacts,
        pre_upsample=pre_up,
        pre_norm=up,
        norms=norms,
    )
    return DescriptorImage(desc), cache


def backward(
    params: EncoderParams,
    cache: ForwardCache,
    pixels: np.ndarray,
    grads: np.ndarray,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Parameter gradients for a loss whose descriptor gradient is `grads`
    at integer pixels `pixels` (N, 2) and zero elsewhere."""
    hh, ww = cache.norms.shape
    pixels = np.asarray(pixels, dtype=np.int64)
    g_desc = np.zeros((hh, ww, params.dim), dtype=params.dtype)
    np.add.at(g_desc, (pixels[:, 1], pixels[:, 0]), grads.astype(params.dtype))

    # normalization backward: y = x / (||x|| + eps)
    x = cache.pre_norm
    n = cache.norms
    denom = n + NORM_EPS
    dot = (x * g_desc).sum(axis=2)
    n_safe = np.where(n > 0, n, 1.0)
    g_up = g_desc / denom[:, :, None] - x * (dot / (n_safe * denom**2))[:, :, None]

    my = _upsample_matrix(cache.pre_upsample.shape[0], UPSAMPLE, params.dtype)
    mx = _upsample_matrix(cache.pre_upsample.shape[1], UPSAMPLE, params.dtype)
    g = np.tensordot(my.T, g_up, axes=(1, 0))
    g = np.tensordot(mx.T, g, axes=(1, 1)).transpose(1, 0, 2)

    dws: List[np.ndarray] = [None] * len(_RECIPE)
    dbs: List[np.ndarray] = [None] * len(_RECIPE)
    for li in reversed(range(len(_RECIPE))):
        k, stride, pad, cin, _ = _RECIPE[li]
        if li < len(_RECIPE) - 1:
            g = g * (cache.preacts[li] > 0)
        g, dws[li], dbs[li] = _conv_backward(
            g, cache.cols[li], params.weights[li], stride, pad, cache.inputs[li].shape
        )
    for dw, db in zip(dws, dbs):
        assert np.isfinite(dw).all() and np.isfinite(db).all(), "non-finite gradient"
    return dws, dbs


# --- checkpoint I/O ----------------------------------------------------------

_MAGIC = b"DSCR"
_VERSION = 1


def save_checkpoint(params: EncoderParams, path) -> None:
    """magic, u32 version, u32 D, 4 u32 dims per layer, float32 LE payload."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, params.dim))
        for w in params.weights:
            f.write(struct.pack("<IIII", *w.shape))
        for w, b in zip(params.weights, params.biases):
            f.write(w.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:4]!r}")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    off = 12
    shapes = []
    for _ in _RECIPE:
        shapes.append(struct.unpack_from("<IIII", data, off))
        off += 16
    expected = layer_shapes(dim)
    if [tuple(s) for s in shapes] != expected:
        raise CheckpointFormatError(f"{path}: layer dims {shapes} do not match recipe")
    weights, biases = [], []
    for kh, kw, cin, cout in shapes:
        wn = kh * kw * cin * cout
        need = 4 * (wn + cout)
        if off + need > len(data):
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        weights.append(
            np.frombuffer(data, dtype="<f4", count=wn, offset=off).reshape(kh, kw, cin, cout).copy()
        )
        off += 4 * wn
        biases.append(np.frombuffer(data, dtype="<f4", count=cout, offset=off).copy())
        off += 4 * cout
    if off != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - off} trailing bytes")
    return EncoderParams(weights=weights, biases=biases, dim=dim)


def checkpoint_size(dim: int) -> int:
    """Exact byte length of a checkpoint for descriptor dimension `dim`."""
    n = 12 + 16 * len(_RECIPE)
    for kh, kw, cin, cout in layer_shapes(dim):
        n += 4 * (kh * kw * cin * cout + cout)
    return n
