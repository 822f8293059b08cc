"""Shape containers, similarity alignment and the generalized Procrustes mean.

Shapes are (L, 2) float64 arrays of landmark coordinates in pixels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShape, EmptyInput

MIN_LANDMARKS = 5


def as_shape(points) -> np.ndarray:
    """Validate and return a shape as an (L, 2) float64 array."""
    s = np.asarray(points, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 2:
        raise ValueError(f"shape must be (L, 2), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("shape contains non-finite coordinates")
    return s


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(rotation) @ p + (tx, ty)."""

    scale: float
    rotation: float
    tx: float
    ty: float

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix().T + np.array([self.tx, self.ty])

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c, s = np.cos(-self.rotation), np.sin(-self.rotation)
        tx = -inv_scale * (c * self.tx - s * self.ty)
        ty = -inv_scale * (s * self.tx + c * self.ty)
        return SimilarityTransform(inv_scale, -self.rotation, tx, ty)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return the transform equivalent to self(other(p))."""
        scale = self.scale * other.scale
        rotation = self.rotation + other.rotation
        t = self.apply(np.array([[other.tx, other.ty]]))[0]
        return SimilarityTransform(scale, rotation, float(t[0]), float(t[1]))

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, 0.0, 0.0, 0.0)


def apply_transform(t: SimilarityTransform, shape: np.ndarray) -> np.ndarray:
    return t.apply(as_shape(shape))


def procrustes_align(src: np.ndarray, ref: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform T minimizing sum ||T(src) - ref||^2."""
    src = as_shape(src)
    ref = as_shape(ref)
    if src.shape != ref.shape:
        raise ValueError("src and ref must have the same landmark count")
    src_c = src.mean(axis=0)
    ref_c = ref.mean(axis=0)
    u = src - src_c
    v = ref - ref_c
    denom = float(np.sum(u * u))
    if denom < 1e-18:
        raise DegenerateShape("source shape has zero spatial variance")
    # Complex formulation: a = <v, u> / ||u||^2 gives scale * e^{i rotation}.
    zu = u[:, 0] + 1j * u[:, 1]
    zv = v[:, 0] + 1j * v[:, 1]
    a = np.sum(np.conj(zu) * zv) / denom
    scale = float(np.abs(a))
    rotation = float(np.angle(a))
    c, s = np.cos(rotation), np.sin(rotation)
    rot = scale * np.array([[c, -s], [s, c]])
    t = ref_c - rot @ src_c
    return SimilarityTransform(scale, rotation, float(t[0]), float(t[1]))


def normalize_shape(shape: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale to unit RMS distance from it."""
    s = as_shape(shape)
    centered = s - s.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum(centered**2, axis=1)))
    if rms < 1e-18:
        raise DegenerateShape("cannot normalize a zero-variance shape")
    return centered / rms


def mean_shape(shapes, iterations: int = 10, tol: float = 1e-8) -> np.ndarray:
    """Generalized Procrustes mean, normalized to unit RMS scale."""
    shapes = [as_shape(s) for s in shapes]
    if not shapes:
        raise EmptyInput("mean_shape needs at least one shape")
    L = shapes[0].shape[0]
    if any(s.shape[0] != L for s in shapes):
        raise ValueError("all shapes must share the landmark count")
    # Order-invariant initialization: average of the normalized inputs.
    mean = normalize_shape(np.mean([normalize_shape(s) for s in shapes], axis=0))
    for _ in range(iterations):
        aligned = [procrustes_align(s, mean).apply(s) for s in shapes]
        new_mean = normalize_shape(np.mean(aligned, axis=0))
        if np.max(np.abs(new_mean - mean)) < tol:
            mean = new_mean
            break
        mean = new_mean
    return mean
