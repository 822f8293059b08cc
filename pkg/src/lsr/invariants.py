"""Plane projective invariants of 5- and 6-point landmark combinations.

A determinant-ratio invariant is computed per combination; combinations whose
value is stable across a labeled population define the face-common geometry,
and predicted shapes are scored by the fraction of combinations whose value
falls inside the learned intrinsic range.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, NoStableCombination
from .geometry import as_shape

# Determinant triples (numerator pair, denominator pair), zero-based.
TRIPLES_5 = (((0, 1, 3), (0, 2, 4)), ((0, 1, 4), (0, 2, 3)))
TRIPLES_6 = (((0, 1, 2), (3, 4, 5)), ((0, 1, 3), (2, 4, 5)))

COLLINEARITY_FACTOR = 1e-9

# For 68-point ibug markup: eye corners, nose, mouth corners, chin, inner brows.
DEFAULT_STABLE_68 = (8, 21, 22, 27, 30, 31, 33, 35, 36, 39, 42, 45, 48, 54)


@dataclass(frozen=True)
class IntrinsicRange:
    c_min: float
    c_max: float
    mean: float
    std: float


@dataclass(frozen=True)
class GeometryModel:
    stable_subset: tuple           # landmark indices the combinations draw from
    combinations: tuple            # ((indices, IntrinsicRange), ...)

    @property
    def combination_count(self) -> int:
        return len(self.combinations)


def _det3(p, a, b, c):
    """Determinant of three homogeneous 2-D points (twice the triangle area)."""
    return ((p[..., b, 0] - p[..., a, 0]) * (p[..., c, 1] - p[..., a, 1])
            - (p[..., b, 1] - p[..., a, 1]) * (p[..., c, 0] - p[..., a, 0]))


def _config_scale(pts):
    centered = pts - pts.mean(axis=-2, keepdims=True)
    return np.sqrt(np.mean(np.sum(centered**2, axis=-1), axis=-1))


def _invariant_values(pts):
    """Invariant and degeneracy flag for (..., k, 2) point configurations."""
    k = pts.shape[-2]
    if k == 5:
        (n1, n2), (d1, d2) = TRIPLES_5
    elif k == 6:
        (n1, n2), (d1, d2) = TRIPLES_6
    else:
        raise ValueError("combinations must have 5 or 6 points")
    dets = np.stack([_det3(pts, *t) for t in (n1, n2, d1, d2)], axis=-1)
    scale = _config_scale(pts)
    tol = COLLINEARITY_FACTOR * scale**3
    degenerate = np.any(np.abs(dets) < tol[..., None], axis=-1)
    denom = dets[..., 2] * dets[..., 3]
    safe = np.where(degenerate, 1.0, denom)
    value = dets[..., 0] * dets[..., 1] / safe
    return value, degenerate


def projective_invariant(points) -> float:
    """Determinant-ratio invariant of 5 or 6 ordered coplanar points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] not in (5, 6):
        raise ValueError("points must be a (5, 2) or (6, 2) array")
    value, degenerate = _invariant_values(pts)
    if degenerate:
        raise DegenerateConfiguration("near-collinear points in a determinant")
    return float(value)


def enumerate_combinations(subset):
    """All 5- and 6-subsets of the stable landmarks, in canonical order."""
    subset = tuple(sorted(subset))
    combos = list(itertools.combinations(subset, 5))
    combos += list(itertools.combinations(subset, 6))
    return combos


def _values_for_combos(shapes, combos):
    """(N, C) invariant values and degeneracy flags for grouped combinations."""
    shapes = np.asarray(shapes)
    values = np.empty((shapes.shape[0], len(combos)))
    degen = np.empty((shapes.shape[0], len(combos)), dtype=bool)
    for k in (5, 6):
        idx = [i for i, c in enumerate(combos) if len(c) == k]
        if not idx:
            continue
        sel = np.array([combos[i] for i in idx], dtype=np.intp)
        pts = shapes[:, sel, :]            # (N, Ck, k, 2)
        v, d = _invariant_values(pts)
        values[:, idx] = v
        degen[:, idx] = d
    return values, degen


def discover_combinations(labeled_shapes, subset, rel_std_threshold: float = 0.05,
                          max_combinations: int = 256) -> GeometryModel:
    """Keep combinations whose invariant is stable across the labeled shapes.

    Stability means no degenerate evaluation and relative standard deviation
    (std / |mean|) at or below the threshold. Kept combinations are sorted by
    std then lexicographic indices and truncated to max_combinations.
    """
    shapes = np.stack([as_shape(s) for s in labeled_shapes])
    if shapes.shape[0] < 10:
        raise ValueError("discovery needs at least 10 labeled shapes")
    subset = tuple(sorted(subset))
    if len(subset) < 5:
        raise ValueError("stable subset must contain at least 5 landmarks")
    combos = enumerate_combinations(subset)
    values, degen = _values_for_combos(shapes, combos)
    kept = []
    for i, combo in enumerate(combos):
        if degen[:, i].any():
            continue
        v = values[:, i]
        mean = float(v.mean())
        std = float(v.std())
        if abs(mean) < 1e-12 or std / abs(mean) > rel_std_threshold:
            continue
        lo = min(max(mean - 3.0 * std, float(v.min())), mean)
        hi = max(min(mean + 3.0 * std, float(v.max())), mean)
        kept.append((combo, IntrinsicRange(lo, hi, mean, std)))
    if not kept:
        raise NoStableCombination("no combination passed the stability threshold")
    kept.sort(key=lambda item: (item[1].std, item[0]))
    return GeometryModel(stable_subset=subset, combinations=tuple(kept[:max_combinations]))


def geometry_score(shape, model: GeometryModel) -> float:
    """Fraction of combinations whose invariant lies in its intrinsic range."""
    return float(geometry_score_batch(np.asarray(shape)[None, ...], model)[0])


def geometry_score_batch(shapes, model: GeometryModel) -> np.ndarray:
    shapes = np.asarray(shapes, dtype=np.float64)
    combos = [c for c, _ in model.combinations]
    values, degen = _values_for_combos(shapes, combos)
    lo = np.array([r.c_min for _, r in model.combinations])
    hi = np.array([r.c_max for _, r in model.combinations])
    in_range = (values >= lo) & (values <= hi) & ~degen
    return in_range.mean(axis=1)
