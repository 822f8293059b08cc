"""The outer self-reinforcement loop: train on survivors, predict labels for
the rest, score each label by appearance and geometry discrepancy, keep
low-discrepancy survivors under a growing admission threshold, repeat until
the scores stabilize."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .appearance import (LandmarkClassifierSet, PerturbationConfig, appearance_score,
                         generate_training_samples, train_classifiers)
from .data import BoundingBox
from .errors import EmptySeed, NoSurvivors
from .features import FeatureConfig
from .geometry import as_shape, mean_shape as gpa_mean
from .invariants import GeometryModel, discover_combinations, geometry_score_batch
from .regressor import CascadeModel, TrainConfig, TrainSample, predict_batch, train_cascade

MANUAL = "manual"
PREDICTED = "predicted"

GEOMETRY_MIN_SHAPES = 10


@dataclass
class SampleRecord:
    image: np.ndarray
    bbox: BoundingBox
    label: np.ndarray | None
    origin: str
    v: int
    a: float | None = None
    g: float | None = None
    ref: str = ""

    @property
    def scored(self) -> bool:
        return self.a is not None and self.g is not None


@dataclass(frozen=True)
class ReinforceConfig:
    lam: float = 1.0
    alpha0: float = 0.5
    alpha_step: float = 0.25
    max_iterations: int = 10
    stability_tol: float = 1e-3
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    perturbation: PerturbationConfig | None = None  # None -> derived from pupils
    score_floor_eps: float = 0.0
    bins_per_component: int = 8
    smoothing: float = 1.0
    rel_std_threshold: float = 0.05
    max_combinations: int = 256
    stable_subset: tuple | None = None  # None -> all landmarks
    pupil_indices: tuple = (0, 1)
    refit_manual: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.score_floor_eps < 0:
            raise ValueError("score floor must be >= 0")


@dataclass(frozen=True)
class IterationStats:
    t: int
    alpha: float
    survivors: int
    mean_a: float
    mean_g: float
    holdout_nme: float | None = None


@dataclass
class ReinforceState:
    iteration: int
    alpha: float
    records: list
    model: CascadeModel | None = None
    classifiers: LandmarkClassifierSet | None = None
    geometry: GeometryModel | None = None
    validator_mean: np.ndarray | None = None
    history: list = field(default_factory=list)
    holdout: list | None = None  # (image, bbox, gt shape) triples

    def survivor_set(self) -> frozenset:
        return frozenset(i for i, r in enumerate(self.records) if r.v)


def combined_score(a: float, g: float, lam: float, eps: float = 0.0) -> float:
    """-(log a + lambda log g); +inf when a floored score hits zero."""
    a = max(a, eps)
    g = max(g, eps)
    if a <= 0.0:
        return math.inf
    total = -math.log(a)
    if lam > 0.0:
        if g <= 0.0:
            return math.inf
        total -= lam * math.log(g)
    return total


def survive(records, lam: float, alpha: float, eps: float = 0.0) -> None:
    """Apply the survival rule in place; manual records always keep v = 1."""
    for r in records:
        if r.origin == MANUAL:
            r.v = 1
        elif r.scored:
            r.v = 1 if combined_score(r.a, r.g, lam, eps) < alpha else 0
        else:
            r.v = 0


def initialize(manual, unlabeled, cfg: ReinforceConfig,
               holdout=None) -> ReinforceState:
    """Build the initial state: manual records survive, unlabeled ones wait.

    Appearance classifiers and the geometry model are trained once, from the
    manual seed only.
    """
    manual = list(manual)
    if not manual:
        raise EmptySeed("at least one manually labeled sample is required")
    records = [SampleRecord(image=img, bbox=bbox, label=as_shape(shape),
                            origin=MANUAL, v=1)
               for img, bbox, shape in manual]
    records += [SampleRecord(image=img, bbox=bbox, label=None,
                             origin=PREDICTED, v=0)
                for img, bbox in unlabeled]
    state = ReinforceState(iteration=0, alpha=cfg.alpha0, records=records,
                           holdout=list(holdout) if holdout is not None else None)

    shapes = [r.label for r in records if r.origin == MANUAL]
    state.validator_mean = gpa_mean(shapes)
    pert = cfg.perturbation
    if pert is None:
        i, j = cfg.pupil_indices
        pupil = float(np.mean([np.linalg.norm(s[i] - s[j]) for s in shapes]))
        pert = PerturbationConfig(sigma=0.1 * pupil, d_t=0.05 * pupil,
                                  rng_seed=cfg.train.rng_seed)
    labeled_pairs = [(r.image, r.label) for r in records if r.origin == MANUAL]
    samples = generate_training_samples(labeled_pairs, pert, cfg.features,
                                        mean=state.validator_mean)
    state.classifiers = train_classifiers(samples, cfg.bins_per_component,
                                          cfg.smoothing)
    if len(shapes) >= GEOMETRY_MIN_SHAPES:
        subset = cfg.stable_subset or tuple(range(shapes[0].shape[0]))
        state.geometry = discover_combinations(shapes, subset,
                                               cfg.rel_std_threshold,
                                               cfg.max_combinations)
    return state


def _score_records(state: ReinforceState, cfg: ReinforceConfig) -> None:
    scored = [r for r in state.records if r.label is not None]
    if not scored:
        return

    def a_of(record):
        return appearance_score(record.image, record.label, state.classifiers,
                                cfg.features, mean=state.validator_mean)

    a_vals = parallel_map(a_of, scored, cfg.threads)
    if state.geometry is not None:
        g_vals = geometry_score_batch(np.stack([r.label for r in scored]),
                                      state.geometry)
    else:
        g_vals = np.ones(len(scored))
    for r, a, g in zip(scored, a_vals, g_vals):
        r.a = float(a)
        r.g = float(g)


def reinforce_step(state: ReinforceState, cfg: ReinforceConfig) -> ReinforceState:
    """One alternation: retrain, re-predict, re-score, grow alpha, re-select."""
    train_samples = [TrainSample(r.image, r.bbox, r.label, r.v)
                     for r in state.records if r.label is not None]
    if not any(s.v for s in train_samples):
        raise NoSurvivors("no surviving samples to retrain on")
    state.model = train_cascade(train_samples, cfg.train, cfg.features)

    targets = [r for r in state.records
               if r.origin == PREDICTED or cfg.refit_manual]
    if targets:
        preds = predict_batch(state.model, [r.image for r in targets],
                              [r.bbox for r in targets])
        for r, p in zip(targets, preds):
            if r.origin == MANUAL and not cfg.refit_manual:
                continue
            r.label = p

    _score_records(state, cfg)
    state.alpha += cfg.alpha_step
    survive(state.records, cfg.lam, state.alpha, cfg.score_floor_eps)
    state.iteration += 1

    holdout_nme = None
    if state.holdout:
        from .evaluation import nme_batch
        preds = predict_batch(state.model, [h[0] for h in state.holdout],
                              [h[1] for h in state.holdout])
        holdout_nme = nme_batch(preds, [h[2] for h in state.holdout],
                                cfg.pupil_indices).mean
    scored = [r for r in state.records if r.scored]
    state.history.append(IterationStats(
        t=state.iteration, alpha=state.alpha,
        survivors=sum(r.v for r in state.records),
        mean_a=float(np.mean([r.a for r in scored])) if scored else float("nan"),
        mean_g=float(np.mean([r.g for r in scored])) if scored else float("nan"),
        holdout_nme=holdout_nme))
    return state


def run(state: ReinforceState, cfg: ReinforceConfig, on_iteration=None):
    """Iterate reinforce_step until scores and survivors stabilize.

    Returns (final model, state). With no predicted-origin records the loop is
    stationary after a single step and stops there.
    """
    manual_only = all(r.origin == MANUAL for r in state.records)
    prev_a = prev_g = None
    prev_survivors = state.survivor_set()
    for _ in range(cfg.max_iterations):
        reinforce_step(state, cfg)
        if on_iteration is not None:
            on_iteration(state)
        if manual_only:
            break
        scored = [r for r in state.records if r.scored]
        a = np.array([r.a for r in scored])
        g = np.array([r.g for r in scored])
        if prev_a is not None and len(prev_a) == len(a):
            da = float(np.max(np.abs(a - prev_a))) if len(a) else 0.0
            dg = float(np.max(np.abs(g - prev_g))) if len(g) else 0.0
        else:
            da = dg = math.inf
        survivors = state.survivor_set()
        if da <= cfg.stability_tol and dg <= cfg.stability_tol \
                and (survivors == prev_survivors
                     or math.isinf(cfg.stability_tol)):
            break
        prev_a, prev_g, prev_survivors = a, g, survivors
    return state.model, state
