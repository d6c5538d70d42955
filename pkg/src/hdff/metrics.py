"""Detection scoring and evaluation metrics.

A sample's score is theta, the angle in degrees to the nearest class
descriptor; larger theta means more likely out-of-distribution. A sample
is declared OOD when theta strictly exceeds the decision threshold.

All rank metrics treat OOD as the positive class and "theta >= t" as the
positive prediction. Counting is done in exact integer arithmetic so the
results match exhaustive pair/threshold enumeration bit-for-bit, ties
included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from numpy.typing import NDArray

from .algebra import angle_degrees
from .errors import DegenerateInputError, DimensionError, UsageError

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import FittedModel

__all__ = [
    "F1Sweep",
    "Histogram",
    "IN_DISTRIBUTION",
    "MetricReport",
    "OUT_OF_DISTRIBUTION",
    "ScoreRecord",
    "angle_histogram",
    "auroc",
    "class_angles",
    "decide",
    "detection_error",
    "evaluate",
    "f1_sweep",
    "fpr_at_95_tpr",
    "pairwise_similarity",
    "score",
    "score_batch",
]

IN_DISTRIBUTION = "id"
OUT_OF_DISTRIBUTION = "ood"

# TPR >= 0.95 is evaluated as 20*count >= 19*n so the 95% cut is exact in
# integers instead of relying on float division landing on 0.95.
_TPR_NUM, _TPR_DEN = 19, 20


@dataclass(frozen=True)
class ScoreRecord:
    """Angle to the nearest class descriptor for one sample."""

    sample_id: int
    theta_degrees: float
    nearest_class: int
    per_class_angles: NDArray[np.float64] | None = None


def class_angles(
    y: NDArray[np.floating], descriptors: NDArray[np.floating]
) -> NDArray[np.float64]:
    """Angles in degrees from y to each row of the (C, m) descriptor matrix."""
    y64 = np.asarray(y, dtype=np.float64)
    d64 = np.asarray(descriptors, dtype=np.float64)
    if y64.ndim != 1 or d64.ndim != 2 or d64.shape[1] != y64.shape[0]:
        raise DimensionError(
            f"descriptor matrix {d64.shape} incompatible with query of shape {y64.shape}"
        )
    ny = math.sqrt(float(y64 @ y64))
    nd = np.sqrt(np.einsum("ij,ij->i", d64, d64))
    if not (ny > 0.0 and math.isfinite(ny)):
        raise DegenerateInputError("query descriptor has zero or non-finite norm")
    if not np.all(nd > 0.0):
        raise DegenerateInputError("a class descriptor has zero norm")
    cos = np.clip((d64 @ y64) / (nd * ny), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def score(y: NDArray[np.floating], model: "FittedModel", sample_id: int = 0) -> ScoreRecord:
    """Score one descriptor against a fitted model.

    theta is the minimum angle over classes; ties go to the lowest class id
    (class descriptors are stored in ascending id order).
    """
    if len(model.class_ids) == 0:
        raise UsageError("model has no class descriptors")
    angles = class_angles(y, model.class_descriptors)
    i = int(np.argmin(angles))
    return ScoreRecord(
        sample_id=sample_id,
        theta_degrees=float(angles[i]),
        nearest_class=int(model.class_ids[i]),
        per_class_angles=angles,
    )


def score_batch(
    ys: NDArray[np.floating],
    descriptors: NDArray[np.floating],
    class_ids: Sequence[int],
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Vectorised scoring of an (n, m) block: returns (thetas, nearest ids)."""
    ys64 = np.asarray(ys, dtype=np.float64)
    d64 = np.asarray(descriptors, dtype=np.float64)
    norms_y = np.sqrt(np.einsum("ij,ij->i", ys64, ys64))
    norms_d = np.sqrt(np.einsum("ij,ij->i", d64, d64))
    if not np.all(norms_y > 0.0):
        raise DegenerateInputError("a query descriptor has zero norm")
    if not np.all(norms_d > 0.0):
        raise DegenerateInputError("a class descriptor has zero norm")
    cos = np.clip((ys64 @ d64.T) / np.outer(norms_y, norms_d), -1.0, 1.0)
    angles = np.degrees(np.arccos(cos))
    idx = np.argmin(angles, axis=1)
    thetas = angles[np.arange(angles.shape[0]), idx]
    ids = np.asarray(class_ids, dtype=np.int64)[idx]
    return thetas, ids


def decide(record: ScoreRecord | float, threshold_degrees: float) -> str:
    """OOD iff theta strictly exceeds the threshold, else in-distribution."""
    theta = record.theta_degrees if isinstance(record, ScoreRecord) else float(record)
    return OUT_OF_DISTRIBUTION if theta > threshold_degrees else IN_DISTRIBUTION


def _as_scores(values: Sequence[float] | NDArray, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise UsageError(f"{name} score list is empty")
    return arr


def auroc(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    """Probability that a random OOD sample scores above a random ID sample.

    Rank-based with ties counting 0.5; identical to exhaustive pair
    counting: (wins + 0.5 * ties) / (n_id * n_ood).
    """
    id_sorted = np.sort(_as_scores(id_scores, "id"))
    ood = _as_scores(ood_scores, "ood")
    lo = np.searchsorted(id_sorted, ood, side="left")
    hi = np.searchsorted(id_sorted, ood, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return (wins + 0.5 * ties) / (id_sorted.size * ood.size)


def _fpr95_point(
    id_scores: NDArray[np.float64], ood_scores: NDArray[np.float64]
) -> tuple[float, int, int]:
    """Threshold at >= 95% TPR plus the (fp, tp) counts there.

    Candidates are the observed scores of both splits; the largest one
    still capturing >= 95% of OOD is chosen.
    """
    ood_sorted = np.sort(ood_scores)
    cands = np.unique(np.concatenate([id_scores, ood_scores]))
    tp = ood_sorted.size - np.searchsorted(ood_sorted, cands, side="left")
    ok = _TPR_DEN * tp >= _TPR_NUM * ood_sorted.size
    t = float(cands[ok][-1])  # candidates ascend, take the largest passing
    id_sorted = np.sort(id_scores)
    fp = int(id_sorted.size - np.searchsorted(id_sorted, t, side="left"))
    tp_at = int(ood_sorted.size - np.searchsorted(ood_sorted, t, side="left"))
    return t, fp, tp_at


def fpr_at_95_tpr(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    """False-positive rate at the loosest threshold reaching 95% TPR."""
    ids = _as_scores(id_scores, "id")
    oods = _as_scores(ood_scores, "ood")
    _, fp, _ = _fpr95_point(ids, oods)
    return fp / ids.size


def detection_error(
    id_scores: Sequence[float], ood_scores: Sequence[float], mode: str = "min"
) -> float:
    """Equal-prior misclassification probability.

    mode="min":   minimum of 0.5*FPR + 0.5*FNR over all thresholds
                  (candidates: midpoints between distinct scores plus
                  -inf/+inf sentinels, which realise every achievable
                  confusion matrix).
    mode="tpr95": the same error evaluated at the 95%-TPR threshold.
    """
    ids = _as_scores(id_scores, "id")
    oods = _as_scores(ood_scores, "ood")
    if mode == "tpr95":
        t, fp, tp = _fpr95_point(ids, oods)
        fn = oods.size - tp
        return 0.5 * (fp / ids.size) + 0.5 * (fn / oods.size)
    if mode != "min":
        raise UsageError(f"unknown detection-error mode {mode!r}")
    distinct = np.unique(np.concatenate([ids, oods]))
    cands = np.concatenate(([-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]))
    id_sorted = np.sort(ids)
    ood_sorted = np.sort(oods)
    fps = ids.size - np.searchsorted(id_sorted, cands, side="left")
    fns = np.searchsorted(ood_sorted, cands, side="left")
    errs = 0.5 * (fps / ids.size) + 0.5 * (fns / oods.size)
    return float(errs.min())


@dataclass(frozen=True)
class F1Sweep:
    """F1 of the OOD-positive binarisation across a threshold grid."""

    thresholds: NDArray[np.float64]
    f1: NDArray[np.float64]
    max_f1: float
    band_mask: NDArray[np.bool_]  # F1 >= 0.95 * max_f1

    def band_runs(self) -> list[tuple[float, float]]:
        """Contiguous [lo, hi] threshold ranges inside the near-optimal band."""
        runs: list[tuple[float, float]] = []
        start = None
        for t, ok in zip(self.thresholds, self.band_mask):
            if ok and start is None:
                start = t
            elif not ok and start is not None:
                runs.append((float(start), float(prev)))
                start = None
            prev = t
        if start is not None:
            runs.append((float(start), float(self.thresholds[-1])))
        return runs


def _threshold_grid(step: float) -> NDArray[np.float64]:
    n_steps = int(math.floor(90.0 / step + 1e-9))
    thr = np.arange(n_steps + 1, dtype=np.float64) * step
    if thr[-1] >= 90.0 or math.isclose(thr[-1], 90.0, rel_tol=0.0, abs_tol=1e-9):
        thr[-1] = 90.0
    else:
        thr = np.append(thr, 90.0)
    return thr


def f1_sweep(
    id_scores: Sequence[float], ood_scores: Sequence[float], step_degrees: float = 0.1
) -> F1Sweep:
    """F1 at thresholds 0, step, ..., 90 with the strict "theta > t" rule."""
    if step_degrees <= 0:
        raise UsageError(f"sweep step must be positive, got {step_degrees}")
    ids = np.sort(_as_scores(id_scores, "id"))
    oods = np.sort(_as_scores(ood_scores, "ood"))
    thr = _threshold_grid(step_degrees)
    tp = oods.size - np.searchsorted(oods, thr, side="right")
    fp = ids.size - np.searchsorted(ids, thr, side="right")
    fn = oods.size - tp
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)  # denominator > 0: fn + tp = n_ood >= 1
    max_f1 = float(f1.max())
    return F1Sweep(thresholds=thr, f1=f1, max_f1=max_f1, band_mask=f1 >= 0.95 * max_f1)


@dataclass(frozen=True)
class Histogram:
    """Counts of theta over [0, 90]; the last bin is closed on the right."""

    bin_lo: NDArray[np.float64]
    bin_hi: NDArray[np.float64]
    counts: NDArray[np.int64]


def angle_histogram(scores: Sequence[float], bin_width_degrees: float) -> Histogram:
    """Bin angles into ceil(90 / width) bins covering [0, 90]."""
    if bin_width_degrees <= 0:
        raise UsageError(f"bin width must be positive, got {bin_width_degrees}")
    arr = np.asarray(scores, dtype=np.float64).ravel()
    nbins = int(math.ceil(90.0 / bin_width_degrees - 1e-9))
    idx = np.floor(arr / bin_width_degrees).astype(np.int64)
    idx = np.clip(idx, 0, nbins - 1)  # theta == 90 lands in the final bin
    counts = np.bincount(idx, minlength=nbins).astype(np.int64)
    lo = np.arange(nbins, dtype=np.float64) * bin_width_degrees
    hi = np.minimum(lo + bin_width_degrees, 90.0)
    return Histogram(bin_lo=lo, bin_hi=hi, counts=counts)


def pairwise_similarity(y1: NDArray[np.floating], y2: NDArray[np.floating]) -> float:
    """Angle between two image descriptors, raw arccos in [0, 180].

    Descriptors produced by this pipeline land in [0, 90] in practice; a
    value beyond 90 means the inputs anti-correlate, which is worth seeing
    rather than folding away.
    """
    return angle_degrees(y1, y2)


@dataclass(frozen=True)
class MetricReport:
    """Aggregate evaluation of one ID split against one OOD split."""

    auroc: float
    fpr_at_95tpr: float
    detection_error: float
    detection_error_mode: str
    max_f1: float
    f1_curve: F1Sweep
    histogram_id: Histogram
    histogram_ood: Histogram
    num_id: int
    num_ood: int

    def to_json_dict(self) -> dict:
        return {
            "schema": "hdff.report.v1",
            "auroc": self.auroc,
            "fpr_at_95tpr": self.fpr_at_95tpr,
            "detection_error": self.detection_error,
            "detection_error_mode": self.detection_error_mode,
            "max_f1": self.max_f1,
            "near_optimal_band": [list(r) for r in self.f1_curve.band_runs()],
            "num_id": self.num_id,
            "num_ood": self.num_ood,
            "f1_curve": [
                [float(t), float(v)]
                for t, v in zip(self.f1_curve.thresholds, self.f1_curve.f1)
            ],
            "histogram": {
                "bin_lo": self.histogram_id.bin_lo.tolist(),
                "bin_hi": self.histogram_id.bin_hi.tolist(),
                "count_id": self.histogram_id.counts.tolist(),
                "count_ood": self.histogram_ood.counts.tolist(),
            },
        }


def evaluate(
    id_scores: Sequence[float],
    ood_scores: Sequence[float],
    *,
    det_err_mode: str = "min",
    f1_step_degrees: float = 0.1,
    bin_width_degrees: float = 1.0,
) -> MetricReport:
    """Compute the full metric suite for one ID/OOD score pairing."""
    ids = _as_scores(id_scores, "id")
    oods = _as_scores(ood_scores, "ood")
    sweep = f1_sweep(ids, oods, f1_step_degrees)
    return MetricReport(
        auroc=auroc(ids, oods),
        fpr_at_95tpr=fpr_at_95_tpr(ids, oods),
        detection_error=detection_error(ids, oods, mode=det_err_mode),
        detection_error_mode=det_err_mode,
        max_f1=sweep.max_f1,
        f1_curve=sweep,
        histogram_id=angle_histogram(ids, bin_width_degrees),
        histogram_ood=angle_histogram(oods, bin_width_degrees),
        num_id=int(ids.size),
        num_ood=int(oods.size),
    )
