"""Command-line entry point: synth, train, reinforce, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Logs go to stdout as
line-delimited JSON; diagnostics to stderr. No subcommand writes outside its
--out directory.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import data as D
from ._parallel import resolve_threads
from .appearance import appearance_score
from .errors import EmptyInput, LsrError
from .evaluation import (ced_curve, discrepancy_error_correlation, nme_batch,
                         write_ced_csv, write_correlation_csv, write_nme_csv)
from .features import FeatureConfig
from .invariants import geometry_score_batch
from .model_io import export_text, load_model, save_model
from .regressor import TrainConfig, TrainSample, predict_batch, train_cascade
from .reinforce import (MANUAL, ReinforceConfig, combined_score, initialize, run)


def _log(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_entries(manifest, root):
    """Materialize (image, bbox, shape-or-None) for every entry."""
    out = []
    for e in manifest.entries:
        img = D.load_image(os.path.join(root, e.image))
        shape = D.load_pts(os.path.join(root, e.pts)) if e.pts else None
        out.append((img, e.bbox, shape))
    return out


def _train_config(args) -> TrainConfig:
    return TrainConfig(stages=args.stages,
                       trees_per_landmark=args.trees,
                       tree_depth=args.depth,
                       ridge_mu=args.mu,
                       initial_perturbations_per_sample=args.perturbations,
                       split_candidates=args.split_candidates,
                       rng_seed=args.seed)


def _add_train_flags(p):
    p.add_argument("--stages", type=int, default=5)
    p.add_argument("--trees", type=int, default=5)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--mu", type=float, default=None,
                   help="ridge weight (default 1e-3 * feature dimension)")
    p.add_argument("--perturbations", type=int, default=5,
                   help="jittered initial shapes per training image")
    p.add_argument("--split-candidates", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)


def cmd_synth(args) -> int:
    cfg = D.SyntheticFaceConfig(count=args.count,
                                deformation_std=args.deformation_std,
                                homography_jitter=args.jitter,
                                texture_seed=args.texture_seed,
                                image_size=args.image_size,
                                rng_seed=args.seed)
    manifest = D.synthesize_dataset(cfg, args.out)
    if args.split:
        counts = [int(c) for c in args.split.split(",")]
        if len(counts) != 3 or sum(counts) != len(manifest.entries):
            raise ValueError(f"--split must be 3 counts summing to {len(manifest.entries)}")
        ratios = [c / len(manifest.entries) for c in counts]
        parts = D.split_manifest(manifest, ratios, args.seed)
        manifest = D.merge_manifests(parts)
        D.save_manifest(os.path.join(args.out, "manifest.jsonl"), manifest)
    _log({"event": "synth", "count": args.count,
          "splits": {s: sum(1 for e in manifest.entries if e.split == s)
                     for s in D.SPLITS}})
    return 0


def cmd_train(args) -> int:
    manifest = D.load_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    train_entries = _load_entries(manifest.subset("train"), root)
    labeled = [(img, bbox, shape) for img, bbox, shape in train_entries
               if shape is not None]
    if not labeled:
        raise EmptyInput("no labeled train entries in the manifest")
    cfg = _train_config(args)
    feat_cfg = FeatureConfig()
    samples = [TrainSample(img, bbox, shape) for img, bbox, shape in labeled]
    model = train_cascade(samples, cfg, feat_cfg)
    os.makedirs(args.out, exist_ok=True)
    save_model(os.path.join(args.out, "model.lsrm"), cascade=model)
    export_text(os.path.join(args.out, "model.json"), cascade=model)
    for t, e in enumerate(model.train_errors):
        _log({"event": "stage", "stage": t, "train_error": e})
    _log({"event": "train", "samples": len(samples), "stages": cfg.stages})
    return 0


def cmd_reinforce(args) -> int:
    manifest = D.load_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    manual = [(img, bbox, shape)
              for img, bbox, shape in _load_entries(manifest.subset("train"), root)
              if shape is not None]
    unlabeled = [(img, bbox)
                 for img, bbox, _ in _load_entries(manifest.subset("unlabeled"), root)]
    holdout = [(img, bbox, shape)
               for img, bbox, shape in _load_entries(manifest.subset("test"), root)
               if shape is not None] or None

    cfg = ReinforceConfig(lam=args.lam, alpha0=args.alpha0,
                          alpha_step=args.alpha_step,
                          max_iterations=args.max_iters,
                          stability_tol=args.stability_tol,
                          train=_train_config(args),
                          features=FeatureConfig(),
                          score_floor_eps=args.eps,
                          pupil_indices=manifest.pupil_indices,
                          refit_manual=args.refit_manual,
                          threads=resolve_threads(args.threads))
    state = initialize(manual, unlabeled, cfg, holdout=holdout)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "iterations.jsonl")
    log_file = open(log_path, "w", encoding="utf-8", newline="\n")

    def on_iteration(st):
        stats = st.history[-1]
        rec = {"t": stats.t, "alpha": stats.alpha, "survivors": stats.survivors,
               "mean_a": stats.mean_a, "mean_g": stats.mean_g,
               "holdout_nme": stats.holdout_nme}
        log_file.write(json.dumps(rec, sort_keys=True) + "\n")
        _log(dict(rec, event="iteration"))
        save_model(os.path.join(args.out, f"checkpoint_{stats.t:03d}.lsrm"),
                   cascade=st.model, classifiers=st.classifiers,
                   geometry=st.geometry)

    try:
        model, state = run(state, cfg, on_iteration=on_iteration)
    finally:
        log_file.close()
    save_model(os.path.join(args.out, "model.lsrm"), cascade=model)
    save_model(os.path.join(args.out, "validators.lsrm"),
               classifiers=state.classifiers, geometry=state.geometry)
    export_text(os.path.join(args.out, "model.json"), cascade=model,
                classifiers=state.classifiers, geometry=state.geometry)
    _log({"event": "reinforce", "iterations": state.iteration,
          "survivors": sum(r.v for r in state.records),
          "records": len(state.records)})
    return 0


def cmd_eval(args) -> int:
    manifest = D.load_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    entries = [(img, bbox, shape)
               for img, bbox, shape in _load_entries(manifest.subset(args.split), root)
               if shape is not None]
    if not entries:
        raise EmptyInput(f"no labeled entries in the {args.split!r} split")
    bundle = load_model(args.model)
    if bundle.cascade is None:
        raise EmptyInput(f"{args.model} holds no cascade section")
    preds = predict_batch(bundle.cascade, [e[0] for e in entries],
                          [e[1] for e in entries])
    result = nme_batch(preds, [e[2] for e in entries], manifest.pupil_indices,
                       tag=args.split)
    os.makedirs(args.out, exist_ok=True)
    write_nme_csv(os.path.join(args.out, "nme.csv"), result)
    write_ced_csv(os.path.join(args.out, "ced.csv"), ced_curve(result.errors))

    if args.validators:
        vb = load_model(args.validators)
        if vb.classifiers is None:
            raise EmptyInput(f"{args.validators} holds no classifier section")
        from .geometry import mean_shape as gpa_mean
        vmean = gpa_mean([e[2] for e in entries])
        feat_cfg = bundle.cascade.feature_config
        scores = []
        for (img, _, _), pred in zip(entries, preds):
            a = appearance_score(img, pred, vb.classifiers, feat_cfg, mean=vmean)
            scores.append((a, pred))
        if vb.geometry is not None:
            g_vals = geometry_score_batch(np.stack(preds), vb.geometry)
        else:
            g_vals = np.ones(len(preds))
        combined = [combined_score(a, float(g), args.lam)
                    for (a, _), g in zip(scores, g_vals)]
        report = discrepancy_error_correlation(combined, result.errors)
        write_correlation_csv(os.path.join(args.out, "correlation.csv"), report)
        _log({"event": "correlation", "spearman": report.spearman_rho,
              "pearson": None if math.isnan(report.pearson_r) else report.pearson_r})
    _log({"event": "eval", "split": args.split, "count": len(entries),
          "mean_nme": result.mean})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsr",
                                description="Self-reinforced cascaded regression "
                                            "for landmark localization")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic dataset")
    ps.add_argument("--count", type=int, required=True)
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--split", default=None,
                    help="train,unlabeled,test counts, e.g. 100,711,0")
    ps.add_argument("--deformation-std", type=float, default=0.02)
    ps.add_argument("--jitter", type=float, default=0.5)
    ps.add_argument("--texture-seed", type=int, default=99)
    ps.add_argument("--image-size", type=int, default=128)
    ps.set_defaults(func=cmd_synth)

    pt = sub.add_parser("train", help="supervised cascade training")
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--out", required=True)
    _add_train_flags(pt)
    pt.set_defaults(func=cmd_train)

    pr = sub.add_parser("reinforce", help="self-reinforced training")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--out", required=True)
    _add_train_flags(pr)
    pr.add_argument("--lambda", dest="lam", type=float, default=1.0,
                    help="geometry weight in the survival rule")
    pr.add_argument("--alpha0", type=float, default=0.5)
    pr.add_argument("--alpha-step", type=float, default=0.25)
    pr.add_argument("--max-iters", type=int, default=10)
    pr.add_argument("--stability-tol", type=float, default=1e-3)
    pr.add_argument("--eps", type=float, default=0.0,
                    help="optional floor applied to a and g before the log")
    pr.add_argument("--refit-manual", action="store_true",
                    help="also re-predict manually labeled samples")
    pr.set_defaults(func=cmd_reinforce)

    pe = sub.add_parser("eval", help="evaluate a model on a manifest split")
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--model", required=True)
    pe.add_argument("--out", required=True)
    pe.add_argument("--split", default="test", choices=D.SPLITS)
    pe.add_argument("--validators", default=None,
                    help="validator container for discrepancy correlation")
    pe.add_argument("--lambda", dest="lam", type=float, default=1.0)
    pe.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as e:
        parser.exit(2, f"error: {e}\n")
    except (LsrError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
