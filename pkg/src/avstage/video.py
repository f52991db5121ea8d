"""Video preprocessing and space-time voxelization.

A clip is a (T, H, W, C) float tensor in [0, 1]. Voxelization cuts it
into non-overlapping space-time patches and flattens each into one token;
the token order is temporal-major (t-block, then h-block, then w-block)
and the in-token order is (p_t, p_h, p_w, C). `unvoxelize` is the exact
inverse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchGeometry:
    p_h: int = 16
    p_w: int = 16
    p_t: int = 2

    def __post_init__(self):
        if min(self.p_h, self.p_w, self.p_t) < 1:
            raise ValueError("patch dimensions must be positive")


@dataclass
class VideoClip:
    pixels: np.ndarray  # (T, H, W, C) in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 4:
            raise ValueError("clip must be a (T, H, W, C) tensor")
        if not np.isfinite(self.pixels).all():
            raise ValueError("clip contains non-finite pixels")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.pixels.shape


@dataclass
class VoxelGrid:
    tokens: np.ndarray  # (n_tokens, p_t * p_h * p_w * C)
    geometry: PatchGeometry
    source_dims: tuple[int, int, int, int]  # (T, H, W, C)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        """(t, h, w) block counts, matching the token order."""
        t, h, w, _ = self.source_dims
        g = self.geometry
        return t // g.p_t, h // g.p_h, w // g.p_w


def voxelize(clip: VideoClip, g: PatchGeometry) -> VoxelGrid:
    t, h, w, c = clip.dims
    for size, patch, axis in ((t, g.p_t, "T"), (h, g.p_h, "H"), (w, g.p_w, "W")):
        if size % patch:
            raise ValueError(f"axis {axis}: extent {size} not divisible by patch {patch}")
    x = clip.pixels.reshape(t // g.p_t, g.p_t, h // g.p_h, g.p_h, w // g.p_w, g.p_w, c)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6)
    tokens = x.reshape(-1, g.p_t * g.p_h * g.p_w * c)
    return VoxelGrid(np.ascontiguousarray(tokens), g, (t, h, w, c))


def unvoxelize(grid: VoxelGrid) -> VideoClip:
    t, h, w, c = grid.source_dims
    g = grid.geometry
    n_expected = (t // g.p_t) * (h // g.p_h) * (w // g.p_w)
    if grid.tokens.shape[0] != n_expected:
        raise ValueError(
            f"token count {grid.tokens.shape[0]} inconsistent with source dims "
            f"{grid.source_dims} (expected {n_expected})"
        )
    x = grid.tokens.reshape(t // g.p_t, h // g.p_h, w // g.p_w, g.p_t, g.p_h, g.p_w, c)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    return VideoClip(np.ascontiguousarray(x.reshape(t, h, w, c)))


def _resize_axis(x: np.ndarray, axis: int, new_size: int) -> np.ndarray:
    """Separable bilinear resampling along one axis (half-pixel centers)."""
    old_size = x.shape[axis]
    if old_size == new_size:
        return x
    src = (np.arange(new_size) + 0.5) * (old_size / new_size) - 0.5
    src = np.clip(src, 0.0, old_size - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, old_size - 1)
    frac = src - lo
    xm = np.moveaxis(x, axis, 0)
    shape = (new_size,) + (1,) * (xm.ndim - 1)
    out = xm[lo] * (1.0 - frac.reshape(shape)) + xm[hi] * frac.reshape(shape)
    return np.moveaxis(out, 0, axis)


def resize_frames(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of (T, H, W, C) frames to (T, size, size, C)."""
    return _resize_axis(_resize_axis(pixels, 1, size), 2, size)


def preprocess(raw: VideoClip, *, size: int = 224, frames: int = 16, stride: int = 4,
               crop: bool = False, hflip: bool = False,
               rng: np.random.Generator | None = None,
               crop_scale: tuple[float, float] = (0.5, 1.0)) -> VideoClip:
    """Temporal stride sampling, optional augmentation, and spatial resize.

    Clips that already hold exactly `frames` frames skip temporal
    sampling; otherwise stride-`stride` sampling requires at least
    stride*(frames-1)+1 input frames. With augmentation off and the
    spatial size already matching, the clip passes through bit-identical.
    """
    t = raw.dims[0]
    if t == frames:
        pixels = raw.pixels
    else:
        needed = stride * (frames - 1) + 1
        if t < needed:
            raise ValueError(
                f"insufficient temporal extent: {t} frames < {needed} required "
                f"for {frames} frames at stride {stride}"
            )
        pixels = raw.pixels[np.arange(frames) * stride]

    if (crop or hflip) and rng is None:
        raise ValueError("augmentation requires an rng")

    if crop:
        _, h, w, _ = pixels.shape
        area = rng.uniform(crop_scale[0], crop_scale[1])
        side = max(1, int(round(np.sqrt(area) * min(h, w))))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        pixels = pixels[:, top : top + side, left : left + side]

    if pixels.shape[1] != size or pixels.shape[2] != size:
        pixels = resize_frames(pixels, size)

    if hflip and rng.random() < 0.5:
        pixels = pixels[:, :, ::-1]

    if pixels is raw.pixels:
        return VideoClip(pixels.copy())
    return VideoClip(np.ascontiguousarray(pixels))


_CLIP_MAGIC = b"AVCL"


def write_clip_file(path, clip: VideoClip):
    """Raw clip container: magic, u32 version, u32 dims[4], float32 payload."""
    pixels = np.ascontiguousarray(clip.pixels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CLIP_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<4I", *pixels.shape))
        fh.write(pixels.tobytes())


def read_clip_file(path) -> VideoClip:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CLIP_MAGIC:
        raise ValueError(f"{path}: not a raw clip file (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != 1:
        raise ValueError(f"{path}: unsupported clip file version {version}")
    dims = struct.unpack("<4I", raw[8:24])
    count = int(np.prod(dims))
    payload = np.frombuffer(raw[24:], dtype="<f4")
    if payload.size != count:
        raise ValueError(f"{path}: payload holds {payload.size} values, header says {count}")
    return VideoClip(payload.reshape(dims).astype(np.float64))
