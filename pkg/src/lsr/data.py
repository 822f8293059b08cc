"""Dataset ingestion: pts annotation files, manifests, bounding boxes, images,
and a procedural synthetic-face generator with exact ground truth."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import EmptyInput, InvalidRatios, IoError, MalformedFile


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bounding box must have positive width and height")

    @property
    def center(self):
        return np.array([self.x + self.w / 2.0, self.y + self.h / 2.0])

    def translated(self, dx, dy):
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)


# ---------------------------------------------------------------------------
# pts files (ibug annotation grammar)

def load_pts(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    lines = [ln.strip() for ln in text.replace("\r\n", "\n").split("\n")]
    lines = [ln for ln in lines if ln]
    if len(lines) < 4 or not lines[0].startswith("version:"):
        raise MalformedFile(f"{path}: missing version header")
    if not lines[1].startswith("n_points:"):
        raise MalformedFile(f"{path}: missing n_points header")
    try:
        n = int(lines[1].split(":", 1)[1])
    except ValueError as e:
        raise MalformedFile(f"{path}: bad n_points value") from e
    if lines[2] != "{" or lines[-1] != "}":
        raise MalformedFile(f"{path}: missing braces")
    body = lines[3:-1]
    coords = []
    for ln in body:
        parts = ln.split()
        if len(parts) != 2:
            raise MalformedFile(f"{path}: expected 'x y' pair, got {ln!r}")
        try:
            coords.append((float(parts[0]), float(parts[1])))
        except ValueError as e:
            raise MalformedFile(f"{path}: non-numeric coordinate in {ln!r}") from e
    if len(coords) != n:
        raise MalformedFile(f"{path}: n_points is {n} but {len(coords)} pairs found")
    return np.array(coords, dtype=np.float64)


def write_pts(path, shape: np.ndarray) -> None:
    shape = np.asarray(shape, dtype=np.float64)
    lines = ["version: 1", f"n_points: {len(shape)}", "{"]
    lines += [f"{x:.6f} {y:.6f}" for x, y in shape]
    lines.append("}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise IoError(str(e)) from e


def load_bbox(path) -> BoundingBox:
    try:
        with open(path, "r", encoding="utf-8") as f:
            parts = f.read().split()
    except OSError as e:
        raise IoError(str(e)) from e
    if len(parts) != 4:
        raise MalformedFile(f"{path}: bbox sidecar must hold 'x y w h'")
    x, y, w, h = (float(p) for p in parts)
    return BoundingBox(x, y, w, h)


def write_bbox(path, bbox: BoundingBox) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{bbox.x:.6f} {bbox.y:.6f} {bbox.w:.6f} {bbox.h:.6f}\n")


# ---------------------------------------------------------------------------
# images

def load_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1]; RGB converted by 601 luma."""
    try:
        with Image.open(path) as im:
            gray = im.convert("L")
            arr = np.asarray(gray, dtype=np.float64) / 255.0
    except OSError as e:
        raise IoError(str(e)) from e
    return arr


def save_image(path, img: np.ndarray) -> None:
    data = np.clip(np.asarray(img) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifests

SPLITS = ("train", "unlabeled", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    pts: str | None
    bbox: BoundingBox
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    landmark_count: int
    pupil_indices: tuple

    def subset(self, split: str) -> "DatasetManifest":
        kept = tuple(e for e in self.entries if e.split == split)
        return DatasetManifest(kept, self.landmark_count, self.pupil_indices)


def save_manifest(path, manifest: DatasetManifest) -> None:
    header = {"type": "header", "landmark_count": manifest.landmark_count,
              "pupil_indices": list(manifest.pupil_indices)}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for e in manifest.entries:
            rec = {"image": e.image, "pts": e.pts,
                   "bbox": [e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h],
                   "split": e.split}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
    except OSError as e:
        raise IoError(str(e)) from e
    if not lines:
        raise MalformedFile(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise MalformedFile(f"{path}: first record must be the header")
    entries = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        bbox = BoundingBox(*rec["bbox"])
        entries.append(ManifestEntry(rec["image"], rec.get("pts"), bbox, rec["split"]))
    return DatasetManifest(tuple(entries), int(header["landmark_count"]),
                           tuple(header["pupil_indices"]))


def split_manifest(manifest: DatasetManifest, ratios, rng_seed: int):
    """Seeded shuffle then partition into (train, unlabeled, test) manifests."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise InvalidRatios(f"split ratios must be 3 nonnegative values summing to 1, got {ratios}")
    n = len(manifest.entries)
    counts = np.floor(ratios * n).astype(int)
    # Largest-remainder rounding so counts sum to n.
    rem = ratios * n - counts
    for i in np.argsort(-rem, kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    perm = np.random.default_rng(rng_seed).permutation(n)
    out = []
    start = 0
    for split, c in zip(SPLITS, counts):
        idx = perm[start:start + c]
        start += c
        entries = tuple(replace(manifest.entries[i], split=split) for i in sorted(idx))
        out.append(DatasetManifest(entries, manifest.landmark_count, manifest.pupil_indices))
    return tuple(out)


def merge_manifests(parts) -> DatasetManifest:
    parts = list(parts)
    if not parts:
        raise EmptyInput("no manifests to merge")
    entries = tuple(e for m in parts for e in m.entries)
    return DatasetManifest(entries, parts[0].landmark_count, parts[0].pupil_indices)


# ---------------------------------------------------------------------------
# synthetic faces

# 14-landmark face template in a [-1, 1] box. Indices 0 and 1 are the pupils
# (the NME normalizer pair); the rest cover eye corners, brows, nose, mouth
# and chin.
FACE14 = np.array([
    [-0.42, -0.30],  # 0  left pupil
    [0.42, -0.30],   # 1  right pupil
    [-0.68, -0.28],  # 2  left eye outer corner
    [-0.18, -0.28],  # 3  left eye inner corner
    [0.18, -0.28],   # 4  right eye inner corner
    [0.68, -0.28],   # 5  right eye outer corner
    [-0.40, -0.58],  # 6  left brow
    [0.40, -0.58],   # 7  right brow
    [0.0, -0.05],    # 8  nose bridge
    [0.0, 0.22],     # 9  nose tip
    [-0.38, 0.52],   # 10 mouth left corner
    [0.38, 0.52],    # 11 mouth right corner
    [0.0, 0.44],     # 12 upper lip
    [0.0, 0.92],     # 13 chin
])

TEMPLATES = {"face14": FACE14}


@dataclass(frozen=True)
class SyntheticFaceConfig:
    count: int = 100
    template: str = "face14"
    deformation_std: float = 0.02
    homography_jitter: float = 0.5
    texture_seed: int = 99
    image_size: int = 128
    rng_seed: int = 0
    patch_size: int = 15

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.deformation_std < 0:
            raise ValueError("deformation_std must be >= 0")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")


def _apply_homography(H, pts):
    ph = np.hstack([pts, np.ones((len(pts), 1))]) @ H.T
    return ph[:, :2] / ph[:, 2:3]


def _random_homography(rng, size, jitter):
    """Base placement into the image plus a jittered projective perturbation."""
    scale = size * 0.30 * (1.0 + 0.10 * jitter * rng.uniform(-1, 1))
    theta = 0.15 * jitter * rng.uniform(-1, 1)
    tx = size / 2.0 + 0.08 * jitter * size * rng.uniform(-1, 1)
    ty = size / 2.0 + 0.08 * jitter * size * rng.uniform(-1, 1)
    c, s = np.cos(theta), np.sin(theta)
    H = np.array([
        [scale * c, -scale * s, tx],
        [scale * s, scale * c, ty],
        [0.0, 0.0, 1.0],
    ])
    persp = 0.3 * jitter / size
    H[2, 0] = persp * rng.uniform(-1, 1) * 0.5
    H[2, 1] = persp * rng.uniform(-1, 1) * 0.5
    return H


_patch_cache: dict = {}


def _landmark_patch(texture_seed, index, patch_size):
    """Distinctive per-landmark texture, fixed across the whole dataset."""
    key = (texture_seed, index, patch_size)
    patch = _patch_cache.get(key)
    if patch is None:
        rng = np.random.default_rng([texture_seed, index])
        coarse = rng.uniform(0, 1, size=(5, 5))
        reps = int(np.ceil(patch_size / 5))
        patch = np.kron(coarse, np.ones((reps, reps)))[:patch_size, :patch_size]
        # A bright center dot pins the exact landmark location.
        c = patch_size // 2
        patch[c - 1:c + 2, c - 1:c + 2] = 1.0
        _patch_cache[key] = patch
    return patch


def render_face(cfg: SyntheticFaceConfig, index: int):
    """Render one synthetic face; returns (image, landmarks, bbox)."""
    rng = np.random.default_rng([cfg.rng_seed, index])
    template = TEMPLATES[cfg.template]
    L = len(template)
    deform = rng.normal(0.0, cfg.deformation_std, size=(L, 2)) if cfg.deformation_std > 0 \
        else np.zeros((L, 2))
    H = _random_homography(rng, cfg.image_size, cfg.homography_jitter)
    landmarks = _apply_homography(H, template + deform)

    size = cfg.image_size
    bg_rng = np.random.default_rng([cfg.rng_seed, index, 1])
    coarse = bg_rng.uniform(0.2, 0.5, size=(size // 8 + 1, size // 8 + 1))
    img = np.kron(coarse, np.ones((8, 8)))[:size, :size].copy()
    gain = 0.85 + 0.3 * bg_rng.uniform()
    half = cfg.patch_size // 2
    for l, (x, y) in enumerate(landmarks):
        patch = _landmark_patch(cfg.texture_seed, l, cfg.patch_size)
        xi, yi = int(round(x)), int(round(y))
        x0, x1 = max(0, xi - half), min(size, xi + half + 1)
        y0, y1 = max(0, yi - half), min(size, yi + half + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        img[y0:y1, x0:x1] = patch[y0 - (yi - half):y1 - (yi - half),
                                  x0 - (xi - half):x1 - (xi - half)]
    img = np.clip(img * gain, 0.0, 1.0)

    lo = landmarks.min(axis=0)
    hi = landmarks.max(axis=0)
    margin = 0.2 * (hi - lo)
    x0, y0 = lo - margin
    w, h = (hi - lo) + 2 * margin
    bbox = BoundingBox(float(x0), float(y0), float(w), float(h))
    return img, landmarks, bbox


def synthesize_dataset(cfg: SyntheticFaceConfig, out_dir) -> DatasetManifest:
    """Generate images, exact pts ground truth, bbox sidecars and a manifest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError(str(e)) from e
    entries = []
    for i in range(cfg.count):
        img, landmarks, bbox = render_face(cfg, i)
        img_name = f"face_{i:05d}.png"
        pts_name = f"face_{i:05d}.pts"
        bbox_name = f"face_{i:05d}.bbox"
        save_image(os.path.join(out_dir, img_name), img)
        write_pts(os.path.join(out_dir, pts_name), landmarks)
        write_bbox(os.path.join(out_dir, bbox_name), bbox)
        entries.append(ManifestEntry(img_name, pts_name, bbox, "train"))
    manifest = DatasetManifest(tuple(entries), len(TEMPLATES[cfg.template]), (0, 1))
    save_manifest(os.path.join(out_dir, "manifest.jsonl"), manifest)
    return manifest
