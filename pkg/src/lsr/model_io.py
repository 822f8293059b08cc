"""Versioned little-endian binary model container plus a lossless text export.

Layout: magic "LSRM", u16 format version, then tagged sections
[4-byte tag][u64 payload length][payload]. Section tags: CASC (cascade),
NBCL (appearance classifiers), GEOM (geometry model). Round trips are
bit-exact.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .appearance import LandmarkClassifier, LandmarkClassifierSet
from .errors import IoError, MalformedFile
from .features import FeatureConfig
from .invariants import GeometryModel, IntrinsicRange
from .regressor import CascadeModel, GlobalLinearStage, LocalMappingStage, Tree

MAGIC = b"LSRM"
FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    cascade: CascadeModel | None = None
    classifiers: LandmarkClassifierSet | None = None
    geometry: GeometryModel | None = None


# ---------------------------------------------------------------------------
# primitive packing

def _w_u32(f, v):
    f.write(struct.pack("<I", v))


def _w_i64(f, v):
    f.write(struct.pack("<q", v))


def _w_f64(f, v):
    f.write(struct.pack("<d", v))


def _w_array(f, a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    _w_u32(f, a.ndim)
    for d in a.shape:
        _w_u32(f, d)
    f.write(a.astype("<f8", copy=False).tobytes())


def _r_u32(f):
    return struct.unpack("<I", f.read(4))[0]


def _r_i64(f):
    return struct.unpack("<q", f.read(8))[0]


def _r_f64(f):
    return struct.unpack("<d", f.read(8))[0]


def _r_array(f):
    ndim = _r_u32(f)
    shape = tuple(_r_u32(f) for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# section payloads

def _pack_feature_config(f, cfg: FeatureConfig):
    _w_u32(f, cfg.patch_size)
    _w_u32(f, cfg.hog_cells)
    _w_u32(f, cfg.hog_bins)
    _w_u32(f, len(cfg.ring_radii))
    for r in cfg.ring_radii:
        _w_f64(f, r)
    _w_u32(f, cfg.points_per_ring)
    _w_u32(f, cfg.comparison_pairs)
    _w_i64(f, cfg.pattern_seed)
    _w_f64(f, cfg.reference_scale)


def _unpack_feature_config(f) -> FeatureConfig:
    patch_size = _r_u32(f)
    hog_cells = _r_u32(f)
    hog_bins = _r_u32(f)
    radii = tuple(_r_f64(f) for _ in range(_r_u32(f)))
    points_per_ring = _r_u32(f)
    comparison_pairs = _r_u32(f)
    pattern_seed = _r_i64(f)
    reference_scale = _r_f64(f)
    return FeatureConfig(patch_size=patch_size, hog_cells=hog_cells,
                         hog_bins=hog_bins, ring_radii=radii,
                         points_per_ring=points_per_ring,
                         comparison_pairs=comparison_pairs,
                         pattern_seed=pattern_seed,
                         reference_scale=reference_scale)


def _pack_cascade(model: CascadeModel) -> bytes:
    f = io.BytesIO()
    _w_u32(f, model.version)
    _pack_feature_config(f, model.feature_config)
    _w_array(f, model.mean_shape)
    _w_u32(f, len(model.train_errors))
    for e in model.train_errors:
        _w_f64(f, e)
    _w_u32(f, len(model.stages))
    for local, glob in model.stages:
        _w_f64(f, local.radius_px)
        _w_u32(f, local.landmark_count)
        _w_u32(f, local.trees_per_landmark)
        for trees in local.forests:
            for tree in trees:
                _w_u32(f, tree.depth)
                _w_array(f, tree.point_a)
                _w_array(f, tree.point_b)
                _w_array(f, tree.thresholds)
                _w_array(f, tree.leaf_offsets)
        _w_array(f, glob.W)
        _w_f64(f, glob.mu)
    return f.getvalue()


def _unpack_cascade(data: bytes) -> CascadeModel:
    f = io.BytesIO(data)
    version = _r_u32(f)
    feat_cfg = _unpack_feature_config(f)
    mean = _r_array(f)
    train_errors = tuple(_r_f64(f) for _ in range(_r_u32(f)))
    stages = []
    for _ in range(_r_u32(f)):
        radius_px = _r_f64(f)
        L = _r_u32(f)
        trees_per = _r_u32(f)
        forests = []
        for _ in range(L):
            trees = []
            for _ in range(trees_per):
                depth = _r_u32(f)
                trees.append(Tree(depth=depth,
                                  point_a=_r_array(f),
                                  point_b=_r_array(f),
                                  thresholds=_r_array(f),
                                  leaf_offsets=_r_array(f)))
            forests.append(trees)
        local = LocalMappingStage(forests=forests, radius_px=radius_px)
        glob = GlobalLinearStage(W=_r_array(f), mu=_r_f64(f))
        stages.append((local, glob))
    return CascadeModel(mean_shape=mean, feature_config=feat_cfg, stages=stages,
                        train_errors=train_errors, version=version)


def _pack_classifiers(clfs: LandmarkClassifierSet) -> bytes:
    f = io.BytesIO()
    _w_u32(f, len(clfs))
    for clf in clfs.classifiers:
        _w_array(f, clf.bin_edges)
        _w_array(f, clf.priors)
        _w_array(f, clf.cond)
    return f.getvalue()


def _unpack_classifiers(data: bytes) -> LandmarkClassifierSet:
    f = io.BytesIO(data)
    out = []
    for _ in range(_r_u32(f)):
        out.append(LandmarkClassifier(bin_edges=_r_array(f), priors=_r_array(f),
                                      cond=_r_array(f)))
    return LandmarkClassifierSet(out)


def _pack_geometry(model: GeometryModel) -> bytes:
    f = io.BytesIO()
    _w_u32(f, len(model.stable_subset))
    for i in model.stable_subset:
        _w_u32(f, i)
    _w_u32(f, len(model.combinations))
    for combo, rng in model.combinations:
        _w_u32(f, len(combo))
        for i in combo:
            _w_u32(f, i)
        for v in (rng.c_min, rng.c_max, rng.mean, rng.std):
            _w_f64(f, v)
    return f.getvalue()


def _unpack_geometry(data: bytes) -> GeometryModel:
    f = io.BytesIO(data)
    subset = tuple(_r_u32(f) for _ in range(_r_u32(f)))
    combos = []
    for _ in range(_r_u32(f)):
        indices = tuple(_r_u32(f) for _ in range(_r_u32(f)))
        vals = tuple(_r_f64(f) for _ in range(4))
        combos.append((indices, IntrinsicRange(*vals)))
    return GeometryModel(stable_subset=subset, combinations=tuple(combos))


# ---------------------------------------------------------------------------
# container

def save_model(path, cascade: CascadeModel | None = None,
               classifiers: LandmarkClassifierSet | None = None,
               geometry: GeometryModel | None = None) -> None:
    sections = []
    if cascade is not None:
        sections.append((b"CASC", _pack_cascade(cascade)))
    if classifiers is not None:
        sections.append((b"NBCL", _pack_classifiers(classifiers)))
    if geometry is not None:
        sections.append((b"GEOM", _pack_geometry(geometry)))
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<H", FORMAT_VERSION))
            for tag, payload in sections:
                f.write(tag)
                f.write(struct.pack("<Q", len(payload)))
                f.write(payload)
    except OSError as e:
        raise IoError(str(e)) from e


def load_model(path) -> ModelBundle:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if blob[:4] != MAGIC:
        raise MalformedFile(f"{path}: bad magic")
    version = struct.unpack("<H", blob[4:6])[0]
    if version != FORMAT_VERSION:
        raise MalformedFile(f"{path}: unsupported format version {version}")
    bundle = ModelBundle()
    pos = 6
    while pos < len(blob):
        tag = blob[pos:pos + 4]
        length = struct.unpack("<Q", blob[pos + 4:pos + 12])[0]
        payload = blob[pos + 12:pos + 12 + length]
        if len(payload) != length:
            raise MalformedFile(f"{path}: truncated section {tag!r}")
        pos += 12 + length
        if tag == b"CASC":
            bundle.cascade = _unpack_cascade(payload)
        elif tag == b"NBCL":
            bundle.classifiers = _unpack_classifiers(payload)
        elif tag == b"GEOM":
            bundle.geometry = _unpack_geometry(payload)
        else:
            raise MalformedFile(f"{path}: unknown section tag {tag!r}")
    return bundle


# ---------------------------------------------------------------------------
# text export

def _float_list(a):
    return [repr(float(x)) for x in np.asarray(a, dtype=np.float64).ravel()]


def export_text(path, cascade: CascadeModel | None = None,
                classifiers: LandmarkClassifierSet | None = None,
                geometry: GeometryModel | None = None) -> None:
    """Lossless JSON export for diffing; floats use shortest round-trip repr."""
    doc: dict = {"format": "lsr-model-text", "version": FORMAT_VERSION}
    if cascade is not None:
        fc = cascade.feature_config
        doc["cascade"] = {
            "feature_config": {
                "patch_size": fc.patch_size, "hog_cells": fc.hog_cells,
                "hog_bins": fc.hog_bins, "ring_radii": _float_list(fc.ring_radii),
                "points_per_ring": fc.points_per_ring,
                "comparison_pairs": fc.comparison_pairs,
                "pattern_seed": fc.pattern_seed,
                "reference_scale": repr(fc.reference_scale),
            },
            "mean_shape": _float_list(cascade.mean_shape),
            "train_errors": _float_list(cascade.train_errors),
            "stages": [
                {
                    "radius_px": repr(local.radius_px),
                    "forests": [
                        [
                            {
                                "depth": tree.depth,
                                "point_a": _float_list(tree.point_a),
                                "point_b": _float_list(tree.point_b),
                                "thresholds": _float_list(tree.thresholds),
                                "leaf_offsets": _float_list(tree.leaf_offsets),
                            }
                            for tree in trees
                        ]
                        for trees in local.forests
                    ],
                    "W": _float_list(glob.W),
                    "W_shape": list(glob.W.shape),
                    "mu": repr(glob.mu),
                }
                for local, glob in cascade.stages
            ],
        }
    if classifiers is not None:
        doc["classifiers"] = [
            {"bin_edges": _float_list(c.bin_edges),
             "priors": _float_list(c.priors),
             "cond": _float_list(c.cond),
             "cond_shape": list(c.cond.shape)}
            for c in classifiers.classifiers
        ]
    if geometry is not None:
        doc["geometry"] = {
            "stable_subset": list(geometry.stable_subset),
            "combinations": [
                {"indices": list(combo),
                 "c_min": repr(r.c_min), "c_max": repr(r.c_max),
                 "mean": repr(r.mean), "std": repr(r.std)}
                for combo, r in geometry.combinations
            ],
        }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def geometry_table(model: GeometryModel) -> str:
    """Human-readable tab-separated table of combinations and ranges."""
    lines = ["indices\tmean\tstd\tc_min\tc_max"]
    for combo, r in model.combinations:
        idx = ",".join(str(i) for i in combo)
        lines.append(f"{idx}\t{r.mean!r}\t{r.std!r}\t{r.c_min!r}\t{r.c_max!r}")
    return "\n".join(lines) + "\n"
