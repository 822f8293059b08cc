"""Cascaded regression core.

Each stage learns per-landmark forests of shallow trees splitting on
pixel-difference tests in the landmark's canonical frame; the forests emit a
sparse binary feature vector consumed by a ridge-regressed global linear map.
Per-sample binary weights exclude non-survivors from every fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import BoundingBox
from .errors import NoSurvivors, SingularSystem
from .features import FeatureConfig
from .geometry import SimilarityTransform, as_shape, mean_shape as gpa_mean, procrustes_align


@dataclass(frozen=True)
class TrainConfig:
    stages: int = 5
    trees_per_landmark: int = 5
    tree_depth: int = 4
    sampling_radius_schedule: tuple = (0.3, 0.2, 0.15, 0.1, 0.08)
    ridge_mu: float | None = None  # None -> 1e-3 * feature dimension
    initial_perturbations_per_sample: int = 5
    split_candidates: int = 500
    rng_seed: int = 0

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.trees_per_landmark < 1:
            raise ValueError("trees_per_landmark must be >= 1")
        if self.tree_depth < 1:
            raise ValueError("tree_depth must be >= 1")
        if self.initial_perturbations_per_sample < 1:
            raise ValueError("initial_perturbations_per_sample must be >= 1")
        if self.split_candidates < 1:
            raise ValueError("split_candidates must be >= 1")
        sched = tuple(float(r) for r in self.sampling_radius_schedule)
        if not sched:
            raise ValueError("sampling_radius_schedule must be nonempty")
        if any(b > a + 1e-12 for a, b in zip(sched, sched[1:])):
            raise ValueError("sampling_radius_schedule must be nonincreasing")
        if self.ridge_mu is not None and self.ridge_mu < 0:
            raise ValueError("ridge_mu must be >= 0")
        object.__setattr__(self, "sampling_radius_schedule", sched)

    def radius_for_stage(self, t: int) -> float:
        sched = self.sampling_radius_schedule
        return sched[min(t, len(sched) - 1)]


@dataclass
class Tree:
    """Complete binary tree in heap layout; split goes left when f <= threshold."""

    depth: int
    point_a: np.ndarray      # (n_internal, 2) canonical offsets
    point_b: np.ndarray
    thresholds: np.ndarray   # (n_internal,)
    leaf_offsets: np.ndarray  # (n_leaves, 2) mean training target per leaf
    cand_idx: np.ndarray | None = None  # transient: pool indices used at fit time

    @property
    def n_internal(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth


@dataclass
class LocalMappingStage:
    forests: list  # forests[l] is a list of Tree, one list per landmark
    radius_px: float

    @property
    def landmark_count(self) -> int:
        return len(self.forests)

    @property
    def trees_per_landmark(self) -> int:
        return len(self.forests[0])

    @property
    def leaves_per_tree(self) -> int:
        return self.forests[0][0].n_leaves

    @property
    def feature_dim(self) -> int:
        return self.landmark_count * self.trees_per_landmark * self.leaves_per_tree


@dataclass
class GlobalLinearStage:
    W: np.ndarray  # (2L, D)
    mu: float


@dataclass
class CascadeModel:
    mean_shape: np.ndarray
    feature_config: FeatureConfig
    stages: list  # list of (LocalMappingStage, GlobalLinearStage)
    train_errors: tuple = ()
    version: int = 1

    @property
    def landmark_count(self) -> int:
        return self.mean_shape.shape[0]


@dataclass(frozen=True)
class StageConfig:
    """Everything a single local-mapping stage needs to train."""

    radius_px: float
    trees_per_landmark: int
    tree_depth: int
    split_candidates: int
    rng_seed: int
    stage_index: int


# ---------------------------------------------------------------------------
# pixel lookups

class ImageStore:
    """Deduplicated image collection with fast nearest-pixel gathers.

    Equal-sized images are stacked once so a lookup is a single fancy index;
    mixed sizes fall back to a per-image loop.
    """

    def __init__(self, images):
        self.images, self.index = _dedupe_images(list(images))
        shapes = {img.shape for img in self.images}
        if len(shapes) == 1:
            self._stack = np.stack(self.images) if self.images else None
        else:
            self._stack = None

    def lookup(self, img_idx, xs, ys):
        """Intensities at the nearest pixel, clamped to the border."""
        xi = np.rint(xs).astype(np.intp)
        yi = np.rint(ys).astype(np.intp)
        if self._stack is not None:
            _, h, w = self._stack.shape
            return self._stack[img_idx, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out = np.empty(xs.shape)
        for k, img in enumerate(self.images):
            m = img_idx == k
            if not np.any(m):
                continue
            h, w = img.shape
            out[m] = img[np.clip(yi[m], 0, h - 1), np.clip(xi[m], 0, w - 1)]
        return out


def _pair_features(store: ImageStore, img_idx, centers, frames, pool_a, pool_b):
    """f[j, k] = I(c_j + F_j a_k) - I(c_j + F_j b_k) for every instance j, test k."""
    pa = np.einsum("jab,kb->jka", frames, pool_a) + centers[:, None, :]
    pb = np.einsum("jab,kb->jka", frames, pool_b) + centers[:, None, :]
    idx = np.broadcast_to(img_idx[:, None], pa.shape[:2])
    va = store.lookup(idx, pa[..., 0], pa[..., 1])
    vb = store.lookup(idx, pb[..., 0], pb[..., 1])
    return va - vb


# ---------------------------------------------------------------------------
# tree fitting

def _best_split(f, y):
    """Exhaustive threshold search maximizing weighted variance reduction.

    Returns (candidate index, threshold) or None if no candidate separates
    the node.
    """
    m = len(y)
    if m < 2:
        return None
    order = np.argsort(f, axis=0, kind="stable")
    fs = np.take_along_axis(f, order, axis=0)
    ys = y[order]                      # (m, K, 2)
    prefix = np.cumsum(ys, axis=0)
    total = prefix[-1]                 # (K, 2)
    left_n = np.arange(1, m, dtype=np.float64)[:, None]
    left = prefix[:-1]
    right = total[None, :, :] - left
    score = (left**2).sum(-1) / left_n + (right**2).sum(-1) / (m - left_n)
    valid = fs[1:] > fs[:-1]
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score))
    if not np.isfinite(score.flat[flat]):
        return None
    pos, k = np.unravel_index(flat, score.shape)
    thr = 0.5 * (fs[pos, k] + fs[pos + 1, k])
    return int(k), float(thr)


def _fit_tree(fvals, targets, pool_a, pool_b, depth):
    """Greedy top-down fit of a complete tree on precomputed candidate features."""
    n = len(targets)
    n_internal = 2**depth - 1
    n_leaves = 2**depth
    cand_idx = np.zeros(n_internal, dtype=np.intp)
    thresholds = np.full(n_internal, np.inf)
    members = {0: np.arange(n)}
    for node in range(n_internal):
        idx = members.pop(node, np.empty(0, dtype=np.intp))
        left, right = 2 * node + 1, 2 * node + 2
        split = _best_split(fvals[idx], targets[idx]) if len(idx) >= 2 else None
        if split is None:
            # Dead node: f <= +inf routes everything left.
            members[left] = idx
            members[right] = np.empty(0, dtype=np.intp)
            continue
        k, thr = split
        cand_idx[node] = k
        thresholds[node] = thr
        go_left = fvals[idx, k] <= thr
        members[left] = idx[go_left]
        members[right] = idx[~go_left]
    leaf_offsets = np.zeros((n_leaves, 2))
    leaf_assign = np.zeros(n, dtype=np.intp)
    for leaf in range(n_leaves):
        idx = members.get(n_internal + leaf, np.empty(0, dtype=np.intp))
        if len(idx):
            leaf_offsets[leaf] = targets[idx].mean(axis=0)
            leaf_assign[idx] = leaf
    tree = Tree(depth=depth,
                point_a=pool_a[cand_idx].copy(),
                point_b=pool_b[cand_idx].copy(),
                thresholds=thresholds,
                leaf_offsets=leaf_offsets,
                cand_idx=cand_idx)
    return tree, leaf_assign


def _candidate_pool(rng_seed, stage, landmark, tree, n_candidates, radius_px):
    rng = np.random.default_rng([rng_seed, 101, stage, landmark, tree])
    def draw():
        r = radius_px * np.sqrt(rng.uniform(size=n_candidates))
        theta = rng.uniform(0, 2 * np.pi, size=n_candidates)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return draw(), draw()


def train_local_mappings(samples, cfg: StageConfig) -> LocalMappingStage:
    """Fit per-landmark forests from (image, current shape, target offset, v) tuples.

    Target offsets are (L, 2) canonical-frame displacements. Only samples with
    v = 1 participate; the fitted stage is identical whether v = 0 samples are
    present or removed.
    """
    survivors = [(img, as_shape(s), np.asarray(t, dtype=np.float64))
                 for img, s, t, v in samples if v]
    if not survivors:
        raise NoSurvivors("no samples with v = 1")
    stage, _ = _train_stage_forests(survivors, cfg)
    return stage


def _instance_frames(shapes, mean, reference_scale):
    """Per-instance canonical->image frames and their inverses."""
    fwd = np.empty((len(shapes), 2, 2))
    for j, s in enumerate(shapes):
        t = procrustes_align(s, mean)
        fwd[j] = t.inverse().matrix() / reference_scale
    return fwd


def _train_stage_forests(survivors, cfg: StageConfig, frames=None, store=None,
                         img_idx=None):
    """Shared forest trainer; returns (stage, phi)."""
    n = len(survivors)
    shapes = np.stack([s for _, s, _ in survivors])
    targets = np.stack([t for _, _, t in survivors])
    L = shapes.shape[1]
    if store is None:
        store = ImageStore([img for img, _, _ in survivors])
        img_idx = store.index
    if frames is None:
        frames = np.broadcast_to(np.eye(2), (n, 2, 2))
    trees_per = cfg.trees_per_landmark
    n_leaves = 2**cfg.tree_depth
    forests = []
    phi_cols = []
    for l in range(L):
        centers = shapes[:, l, :]
        trees = []
        for t in range(trees_per):
            pool_a, pool_b = _candidate_pool(cfg.rng_seed, cfg.stage_index, l, t,
                                             cfg.split_candidates, cfg.radius_px)
            fvals = _pair_features(store, img_idx, centers, frames, pool_a, pool_b)
            tree, leaf_assign = _fit_tree(fvals, targets[:, l, :], pool_a, pool_b,
                                          cfg.tree_depth)
            trees.append(tree)
            phi_cols.append((l * trees_per + t) * n_leaves + leaf_assign)
        forests.append(trees)
    stage = LocalMappingStage(forests=forests, radius_px=cfg.radius_px)
    phi = np.zeros((n, stage.feature_dim))
    rows = np.arange(n)
    for cols in phi_cols:
        phi[rows, cols] = 1.0
    return stage, phi


def _dedupe_images(images):
    uniq = []
    seen = {}
    idx = np.empty(len(images), dtype=np.intp)
    for j, img in enumerate(images):
        key = id(img)
        if key not in seen:
            seen[key] = len(uniq)
            uniq.append(img)
        idx[j] = seen[key]
    return uniq, idx


def stage_phi(stage: LocalMappingStage, store: ImageStore, img_idx, shapes,
              frames) -> np.ndarray:
    """Binary feature matrix for instances routed through an already-fit stage."""
    n = len(shapes)
    phi = np.zeros((n, stage.feature_dim))
    rows = np.arange(n)
    n_leaves = stage.leaves_per_tree
    trees_per = stage.trees_per_landmark
    for l, trees in enumerate(stage.forests):
        centers = shapes[:, l, :]
        for t, tree in enumerate(trees):
            node = np.zeros(n, dtype=np.intp)
            for _ in range(tree.depth):
                pa = tree.point_a[node]
                pb = tree.point_b[node]
                qa = np.einsum("jab,jb->ja", frames, pa) + centers
                qb = np.einsum("jab,jb->ja", frames, pb) + centers
                va = store.lookup(img_idx, qa[:, 0], qa[:, 1])
                vb = store.lookup(img_idx, qb[:, 0], qb[:, 1])
                f = va - vb
                node = 2 * node + 1 + (f > tree.thresholds[node])
            leaf = node - tree.n_internal
            phi[rows, (l * trees_per + t) * n_leaves + leaf] = 1.0
    return phi


# ---------------------------------------------------------------------------
# global linear stage

def train_global_regression(phi, targets, v, mu) -> GlobalLinearStage:
    """Weighted ridge solve of (Phi_s' Phi_s + mu I) W' = Phi_s' targets_s.

    Rows with v = 0 are dropped, which is exactly equivalent to the
    binary-weighted objective.
    """
    phi = np.asarray(phi, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    v = np.asarray(v).astype(bool)
    if phi.shape[0] != targets.shape[0] or phi.shape[0] != v.shape[0]:
        raise ValueError("phi, targets and v must agree on the sample count")
    phi_s = phi[v]
    y_s = targets[v]
    d = phi.shape[1]
    A = phi_s.T @ phi_s + mu * np.eye(d)
    B = phi_s.T @ y_s
    try:
        W = cho_solve(cho_factor(A, lower=True), B).T
    except np.linalg.LinAlgError as e:
        raise SingularSystem("rank-deficient Gram matrix with mu = 0") from e
    return GlobalLinearStage(W=W, mu=float(mu))


# ---------------------------------------------------------------------------
# cascade training and prediction

@dataclass(frozen=True)
class TrainSample:
    image: np.ndarray
    bbox: BoundingBox
    shape: np.ndarray
    v: int = 1


def place_shape_in_bbox(mean, bbox: BoundingBox) -> np.ndarray:
    """Scale the mean shape into the box and center its extent."""
    mean = as_shape(mean)
    span = mean.max(axis=0) - mean.min(axis=0)
    scale = min(bbox.w / span[0], bbox.h / span[1])
    s = mean * scale
    mid = (s.max(axis=0) + s.min(axis=0)) / 2.0
    return s + (bbox.center - mid)


def _initial_shapes(survivors, mean, cfg: TrainConfig):
    """Jittered mean-shape placements; keyed by survivor order so the result
    does not depend on how many non-survivors sit in the pool."""
    init_shapes = []
    owner = []
    for j, smp in enumerate(survivors):
        rng = np.random.default_rng([cfg.rng_seed, 7, j])
        base = place_shape_in_bbox(mean, smp.bbox)
        # the first initialization is the exact placement predict() starts
        # from; only the extra copies are jittered
        init_shapes.append(base)
        owner.append(j)
        for _ in range(cfg.initial_perturbations_per_sample - 1):
            dx = rng.uniform(-0.08, 0.08) * smp.bbox.w
            dy = rng.uniform(-0.08, 0.08) * smp.bbox.h
            sc = rng.uniform(0.9, 1.1)
            c = base.mean(axis=0)
            init_shapes.append((base - c) * sc + c + np.array([dx, dy]))
            owner.append(j)
    return np.stack(init_shapes), np.asarray(owner, dtype=np.intp)


def train_cascade(samples, cfg: TrainConfig,
                  feat_cfg: FeatureConfig | None = None) -> CascadeModel:
    """Train the full cascade on survivor samples (v = 1)."""
    feat_cfg = feat_cfg or FeatureConfig()
    survivors = [s for s in samples if s.v]
    if not survivors:
        raise NoSurvivors("all samples have v = 0")
    ref_scale = feat_cfg.reference_scale
    mean = gpa_mean([s.shape for s in survivors])
    L = mean.shape[0]

    cur, owner = _initial_shapes(survivors, mean, cfg)
    store = ImageStore([s.image for s in survivors])
    img_idx = store.index[owner]
    gt = np.stack([survivors[j].shape for j in owner])
    n = len(cur)

    stages = []
    train_errors = []
    for t in range(cfg.stages):
        transforms = [procrustes_align(cur[j], mean) for j in range(n)]
        frames = np.stack([tr.inverse().matrix() / ref_scale for tr in transforms])
        fwd = np.stack([tr.matrix() * ref_scale for tr in transforms])
        delta = np.einsum("jab,jlb->jla", fwd, gt - cur)

        stage_cfg = StageConfig(radius_px=cfg.radius_for_stage(t) * 2.0 * ref_scale,
                                trees_per_landmark=cfg.trees_per_landmark,
                                tree_depth=cfg.tree_depth,
                                split_candidates=cfg.split_candidates,
                                rng_seed=cfg.rng_seed,
                                stage_index=t)
        triples = [(None, cur[j], delta[j]) for j in range(n)]
        local, phi = _train_stage_forests(triples, stage_cfg, frames=frames,
                                          store=store, img_idx=img_idx)
        mu = cfg.ridge_mu if cfg.ridge_mu is not None else 1e-3 * phi.shape[1]
        glob = train_global_regression(phi, delta.reshape(n, 2 * L),
                                       np.ones(n), mu)
        pred = (phi @ glob.W.T).reshape(n, L, 2)
        cur = cur + np.einsum("jab,jlb->jla", frames, pred)
        stages.append((local, glob))

        scales = np.array([tr.scale for tr in transforms])
        err = np.mean(np.linalg.norm(gt - cur, axis=2) * scales[:, None])
        train_errors.append(float(err))

    return CascadeModel(mean_shape=mean, feature_config=feat_cfg, stages=stages,
                        train_errors=tuple(train_errors))


def predict(model: CascadeModel, img, bbox: BoundingBox) -> np.ndarray:
    return predict_batch(model, [img], [bbox])[0]


def predict_batch(model: CascadeModel, images_in, bboxes) -> np.ndarray:
    """Run the cascade from the placed mean shape for each (image, bbox)."""
    store = ImageStore(images_in)
    img_idx = store.index
    n = len(bboxes)
    L = model.landmark_count
    ref_scale = model.feature_config.reference_scale
    cur = np.stack([place_shape_in_bbox(model.mean_shape, b) for b in bboxes])
    for local, glob in model.stages:
        transforms = [procrustes_align(cur[j], model.mean_shape) for j in range(n)]
        frames = np.stack([tr.inverse().matrix() / ref_scale for tr in transforms])
        phi = stage_phi(local, store, img_idx, cur, frames)
        pred = (phi @ glob.W.T).reshape(n, L, 2)
        cur = cur + np.einsum("jab,jlb->jla", frames, pred)
    return cur
