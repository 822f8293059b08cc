"""Alignment metrics: inter-pupil-normalized mean error, cumulative error
distributions, and discrepancy-vs-error rank correlation."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConstantInput, EmptyInput, ZeroPupilDistance
from .geometry import as_shape

# Thresholds in percent of inter-pupil distance.
DEFAULT_CED_THRESHOLDS = tuple(np.round(np.arange(0.0, 15.0 + 1e-9, 0.1), 10))


@dataclass(frozen=True)
class NMEResult:
    errors: tuple
    mean: float
    tag: str = ""


@dataclass(frozen=True)
class CEDCurve:
    points: tuple  # ((threshold, fraction), ...)


@dataclass(frozen=True)
class CorrelationReport:
    pairs: tuple       # (score, error) sorted by error ascending
    spearman_rho: float
    pearson_r: float
    count: int


def nme(pred, gt, pupil_indices) -> float:
    """Mean landmark error over inter-pupil distance, in percent."""
    pred = as_shape(pred)
    gt = as_shape(gt)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt must have the same landmark count")
    i, j = pupil_indices
    d = float(np.linalg.norm(gt[i] - gt[j]))
    if d <= 0:
        raise ZeroPupilDistance("ground-truth pupils coincide")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)) / d * 100.0)


def nme_batch(preds, gts, pupil_indices, tag: str = "") -> NMEResult:
    errors = tuple(nme(p, g, pupil_indices) for p, g in zip(preds, gts))
    if not errors:
        raise EmptyInput("no samples to evaluate")
    return NMEResult(errors=errors, mean=float(np.mean(errors)), tag=tag)


def ced_curve(errors, thresholds=DEFAULT_CED_THRESHOLDS) -> CEDCurve:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise EmptyInput("no errors for the CED curve")
    thresholds = list(thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    # Always include the max observed error so the curve reaches 1.
    emax = float(errors.max())
    if not thresholds or thresholds[-1] < emax:
        thresholds.append(emax)
    pts = tuple((float(t), float(np.count_nonzero(errors <= t) / errors.size))
                for t in thresholds)
    return CEDCurve(points=pts)


def spearman(x, y) -> float:
    """Spearman rank correlation with average-rank ties; infinities allowed."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("need at least 3 paired observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("rank correlation undefined for a constant variable")
    rx = rankdata(x)
    ry = rankdata(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float(np.sum(rx * ry) / np.sqrt(np.sum(rx**2) * np.sum(ry**2)))


def discrepancy_error_correlation(scores, errors) -> CorrelationReport:
    """Pair discrepancy scores with true labeling errors, sorted by error."""
    scores = np.asarray(scores, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if scores.size != errors.size or scores.size < 3:
        raise ValueError("need at least 3 scored samples with oracle errors")
    rho = spearman(scores, errors)
    finite = np.isfinite(scores) & np.isfinite(errors)
    if finite.sum() >= 2 and np.ptp(scores[finite]) > 0 and np.ptp(errors[finite]) > 0:
        pearson = float(np.corrcoef(scores[finite], errors[finite])[0, 1])
    else:
        pearson = float("nan")
    order = np.argsort(errors, kind="stable")
    pairs = tuple((float(scores[i]), float(errors[i])) for i in order)
    return CorrelationReport(pairs=pairs, spearman_rho=rho, pearson_r=pearson,
                             count=int(scores.size))


# ---------------------------------------------------------------------------
# CSV outputs

def write_nme_csv(path, result: NMEResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "error"])
        for i, e in enumerate(result.errors):
            w.writerow([i, repr(e)])


def write_ced_csv(path, curve: CEDCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "fraction"])
        for t, frac in curve.points:
            w.writerow([repr(t), repr(frac)])


def write_correlation_csv(path, report: CorrelationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "score", "error"])
        for i, (score, err) in enumerate(report.pairs):
            w.writerow([i, repr(score), repr(err)])
