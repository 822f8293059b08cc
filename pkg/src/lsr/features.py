"""Local descriptors around landmarks and their shape-indexed concatenation.

Two descriptor parts per landmark: a cell-wise gradient-orientation histogram
and a ring-sampled binary comparison descriptor. Images are (H, W) float64
arrays with intensities in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import as_shape, procrustes_align

HOG_NORM_EPS = 1e-6


def as_gray_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"image must be 2-D grayscale, got ndim={a.ndim}")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("intensities must lie in [0, 1]")
    return a


@dataclass(frozen=True)
class FeatureConfig:
    patch_size: int = 31
    hog_cells: int = 4
    hog_bins: int = 8
    ring_radii: tuple = (4.0, 8.0, 12.0)
    points_per_ring: int = 8
    comparison_pairs: int = 128
    pattern_seed: int = 20210
    # Pixels per unit of mean-shape scale; a face of this RMS size is
    # sampled at native resolution in the canonical frame.
    reference_scale: float = 60.0

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.hog_bins < 2:
            raise ValueError("hog_bins must be >= 2")
        radii = tuple(float(r) for r in self.ring_radii)
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("ring_radii must be strictly increasing")
        if radii and radii[-1] >= self.patch_size / 2:
            raise ValueError("ring radii must stay inside the patch")
        object.__setattr__(self, "ring_radii", radii)

    @property
    def hog_length(self) -> int:
        return self.hog_cells * self.hog_cells * self.hog_bins

    @property
    def binary_length(self) -> int:
        return self.comparison_pairs

    @property
    def descriptor_length(self) -> int:
        return self.hog_length + self.binary_length


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation with edge clamping (border replication)."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


_patch_grid_cache: dict = {}


def _patch_offsets(patch_size: int) -> np.ndarray:
    grid = _patch_grid_cache.get(patch_size)
    if grid is None:
        half = patch_size // 2
        d = np.arange(-half, half + 1, dtype=np.float64)
        dx, dy = np.meshgrid(d, d)
        grid = np.stack([dx.ravel(), dy.ravel()], axis=1)
        _patch_grid_cache[patch_size] = grid
    return grid


def extract_patch(img, center, cfg: FeatureConfig, frame: np.ndarray | None = None) -> np.ndarray:
    """Sample a patch_size x patch_size patch around center.

    `frame` is a 2x2 matrix mapping canonical pixel offsets into the image;
    identity means axis-aligned sampling at native scale.
    """
    img = as_gray_image(img)
    offs = _patch_offsets(cfg.patch_size)
    if frame is not None:
        offs = offs @ np.asarray(frame, dtype=np.float64).T
    xs = center[0] + offs[:, 0]
    ys = center[1] + offs[:, 1]
    return sample_bilinear(img, xs, ys).reshape(cfg.patch_size, cfg.patch_size)


def _patch_gradients(patch: np.ndarray):
    """Central differences with edge replication."""
    padded = np.pad(patch, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def _cell_edges(patch_size: int, cells: int) -> np.ndarray:
    return np.floor(np.linspace(0, patch_size, cells + 1)).astype(np.intp)


def hog_patch(img, center, cfg: FeatureConfig, frame: np.ndarray | None = None) -> np.ndarray:
    """Cell-wise orientation histograms of gradient magnitude, L2-normalized per cell."""
    patch = extract_patch(img, center, cfg, frame)
    gx, gy = _patch_gradients(patch)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / np.pi * cfg.hog_bins).astype(np.intp), cfg.hog_bins - 1)
    edges = _cell_edges(cfg.patch_size, cfg.hog_cells)
    out = np.empty(cfg.hog_length)
    k = 0
    for cy in range(cfg.hog_cells):
        for cx in range(cfg.hog_cells):
            sl = (slice(edges[cy], edges[cy + 1]), slice(edges[cx], edges[cx + 1]))
            hist = np.bincount(bins[sl].ravel(), weights=mag[sl].ravel(),
                               minlength=cfg.hog_bins)
            norm = np.sqrt(np.sum(hist * hist) + HOG_NORM_EPS**2)
            out[k:k + cfg.hog_bins] = hist / norm
            k += cfg.hog_bins
    return out


_pattern_cache: dict = {}


def sampling_pattern(cfg: FeatureConfig):
    """Ring sample offsets, per-point smoothing half-widths and comparison pairs."""
    key = (cfg.ring_radii, cfg.points_per_ring, cfg.comparison_pairs, cfg.pattern_seed)
    cached = _pattern_cache.get(key)
    if cached is not None:
        return cached
    offsets = [(0.0, 0.0)]
    widths = [1]
    for r in cfg.ring_radii:
        for k in range(cfg.points_per_ring):
            theta = 2.0 * np.pi * k / cfg.points_per_ring
            offsets.append((r * np.cos(theta), r * np.sin(theta)))
            widths.append(max(1, int(round(r / 4.0))))
    offsets = np.asarray(offsets)
    widths = np.asarray(widths, dtype=np.intp)
    n = len(offsets)
    rng = np.random.default_rng([cfg.pattern_seed, n])
    pairs = np.empty((cfg.comparison_pairs, 2), dtype=np.intp)
    for i in range(cfg.comparison_pairs):
        a, b = rng.choice(n, size=2, replace=False)
        pairs[i] = (a, b)
    _pattern_cache[key] = (offsets, widths, pairs)
    return offsets, widths, pairs


def smoothed_samples(img, center, cfg: FeatureConfig, frame: np.ndarray | None = None) -> np.ndarray:
    """Box-smoothed intensities at the ring sampling points."""
    img = as_gray_image(img)
    offsets, widths, _ = sampling_pattern(cfg)
    if frame is not None:
        offsets = offsets @ np.asarray(frame, dtype=np.float64).T
    vals = np.empty(len(offsets))
    for i, ((dx, dy), w) in enumerate(zip(offsets, widths)):
        d = np.arange(-w, w + 1, dtype=np.float64)
        bx, by = np.meshgrid(d, d)
        xs = center[0] + dx + bx.ravel()
        ys = center[1] + dy + by.ravel()
        vals[i] = sample_bilinear(img, xs, ys).mean()
    return vals


def binary_descriptor(img, center, cfg: FeatureConfig, frame: np.ndarray | None = None) -> np.ndarray:
    """Bit k = 1 iff smoothed intensity at pair point A_k strictly exceeds B_k."""
    vals = smoothed_samples(img, center, cfg, frame)
    _, _, pairs = sampling_pattern(cfg)
    return (vals[pairs[:, 0]] > vals[pairs[:, 1]]).astype(np.float64)


def landmark_descriptor(img, center, cfg: FeatureConfig, frame: np.ndarray | None = None) -> np.ndarray:
    return np.concatenate([hog_patch(img, center, cfg, frame),
                           binary_descriptor(img, center, cfg, frame)])


def canonical_frame(shape: np.ndarray, mean: np.ndarray,
                    reference_scale: float = 60.0) -> np.ndarray:
    """2x2 matrix mapping canonical pixel offsets into the image.

    Canonical offsets are pixels at `reference_scale` (pixels per mean-shape
    unit); the frame undoes the face's in-image rotation and rescales so a
    reference-sized face samples at native resolution.
    """
    t = procrustes_align(as_shape(shape), as_shape(mean))
    return t.inverse().matrix() / reference_scale


def shape_indexed_features(img, shape, cfg: FeatureConfig, mean: np.ndarray | None = None) -> np.ndarray:
    """Concatenated per-landmark descriptors, sampled in the shape's canonical frame."""
    shape = as_shape(shape)
    frame = canonical_frame(shape, mean, cfg.reference_scale) if mean is not None else None
    parts = [landmark_descriptor(img, p, cfg, frame) for p in shape]
    return np.concatenate(parts)
