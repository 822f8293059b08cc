"""Per-landmark naive-Bayes validation of local appearance.

Classifiers are trained from Gaussian-perturbed ground-truth landmarks:
perturbations landing within d_t of the true location are positives, the rest
negatives. The appearance score of a shape is the fraction of landmarks whose
local descriptor the classifier accepts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientClass
from .features import FeatureConfig, canonical_frame, landmark_descriptor
from .geometry import as_shape

VALID, INVALID = 1, 0


@dataclass(frozen=True)
class PerturbationConfig:
    sigma: float
    d_t: float
    samples_per_landmark: int = 200
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0 or self.d_t <= 0:
            raise ValueError("sigma and d_t must be positive")
        if self.samples_per_landmark < 2:
            raise ValueError("samples_per_landmark must be >= 2")


@dataclass(frozen=True)
class PerturbedSample:
    landmark_index: int
    location: np.ndarray
    distance: float
    positive: bool
    descriptor: np.ndarray


@dataclass
class LandmarkClassifier:
    """Discretized naive Bayes over descriptor components, Laplace-smoothed."""

    bin_edges: np.ndarray   # (m, bins - 1) interior edges per component
    priors: np.ndarray      # (2,) indexed by class, [invalid, valid]
    cond: np.ndarray        # (2, m, bins) class-conditional bin probabilities

    @property
    def n_components(self) -> int:
        return self.bin_edges.shape[0]

    @property
    def n_bins(self) -> int:
        return self.cond.shape[2]

    def bin_indices(self, descriptor: np.ndarray) -> np.ndarray:
        d = np.asarray(descriptor, dtype=np.float64)
        if d.shape != (self.n_components,):
            raise DimensionMismatch(
                f"descriptor has {d.shape} components, classifier expects {self.n_components}")
        idx = np.empty(self.n_components, dtype=np.intp)
        for k in range(self.n_components):
            idx[k] = np.searchsorted(self.bin_edges[k], d[k], side="right")
        return idx


@dataclass
class LandmarkClassifierSet:
    classifiers: list  # one LandmarkClassifier per landmark

    def __len__(self):
        return len(self.classifiers)


def generate_training_samples(labeled, cfg: PerturbationConfig,
                              feat_cfg: FeatureConfig,
                              mean=None) -> list:
    """Perturb ground-truth landmarks of (image, shape) pairs into labeled
    descriptor samples. Positives are strictly closer than d_t."""
    labeled = [(img, as_shape(s)) for img, s in labeled]
    if not labeled:
        raise ValueError("need at least one labeled sample")
    L = labeled[0][1].shape[0]
    frames = [canonical_frame(s, mean, feat_cfg.reference_scale) if mean is not None else None
              for _, s in labeled]
    out = []
    for l in range(L):
        rng = np.random.default_rng([cfg.rng_seed, 31, l])
        for _ in range(cfg.samples_per_landmark):
            i = int(rng.integers(len(labeled)))
            img, shape = labeled[i]
            delta = rng.normal(0.0, cfg.sigma, size=2)
            loc = shape[l] + delta
            d = float(np.linalg.norm(delta))
            desc = landmark_descriptor(img, loc, feat_cfg, frames[i])
            out.append(PerturbedSample(l, loc, d, d < cfg.d_t, desc))
    return out


def _quantile_edges(values: np.ndarray, bins: int) -> np.ndarray:
    qs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    return np.quantile(values, qs)


def train_classifiers(samples, bins_per_component: int = 8,
                      smoothing: float = 1.0) -> LandmarkClassifierSet:
    """Fit one discretized naive-Bayes classifier per landmark."""
    by_landmark: dict = {}
    for s in samples:
        by_landmark.setdefault(s.landmark_index, []).append(s)
    L = max(by_landmark) + 1
    classifiers = []
    for l in range(L):
        group = by_landmark.get(l, [])
        X = np.stack([s.descriptor for s in group]) if group else np.empty((0, 0))
        y = np.array([1 if s.positive else 0 for s in group], dtype=np.intp)
        n_pos = int(y.sum())
        if n_pos == 0 or n_pos == len(y):
            raise InsufficientClass(f"landmark {l} lacks a positive or negative class")
        m = X.shape[1]
        edges = np.stack([_quantile_edges(X[:, k], bins_per_component) for k in range(m)])
        counts = np.zeros((2, m, bins_per_component))
        for k in range(m):
            b = np.searchsorted(edges[k], X[:, k], side="right")
            for c in (0, 1):
                counts[c, k] = np.bincount(b[y == c], minlength=bins_per_component)
        n_c = np.array([(y == 0).sum(), (y == 1).sum()], dtype=np.float64)
        priors = n_c / n_c.sum()
        cond = (counts + smoothing) / (n_c[:, None, None] + bins_per_component * smoothing)
        classifiers.append(LandmarkClassifier(bin_edges=edges, priors=priors, cond=cond))
    return LandmarkClassifierSet(classifiers)


def classify_landmark(clf: LandmarkClassifier, descriptor) -> int:
    """Log-posterior argmax; exact ties resolve to INVALID."""
    idx = clf.bin_indices(descriptor)
    k = np.arange(clf.n_components)
    log_post = np.log(clf.priors) + np.log(clf.cond[:, k, idx]).sum(axis=1)
    return VALID if log_post[VALID] > log_post[INVALID] else INVALID


def appearance_score(img, shape, clfs: LandmarkClassifierSet,
                     feat_cfg: FeatureConfig, mean=None) -> float:
    """Fraction of landmarks classified valid; always a multiple of 1/L."""
    shape = as_shape(shape)
    if shape.shape[0] != len(clfs):
        raise DimensionMismatch("shape landmark count does not match classifier set")
    frame = canonical_frame(shape, mean, feat_cfg.reference_scale) if mean is not None else None
    n_valid = 0
    for l, clf in enumerate(clfs.classifiers):
        desc = landmark_descriptor(img, shape[l], feat_cfg, frame)
        n_valid += classify_landmark(clf, desc)
    return n_valid / shape.shape[0]
