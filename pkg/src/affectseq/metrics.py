"""Evaluation metrics: pooled CCC for VA, macro F1 for EXPR/AU.

Both metrics are built on mergeable streaming accumulators (integer
confusion counts, float64 moment sums) so sharded evaluation combines
associatively to the batch result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from affectseq.errors import InsufficientDataError, ValidationError
from affectseq.features import NUM_AU, NUM_EXPR_CLASSES
from affectseq.losses import CCC_DENOM_FLOOR


@dataclass(frozen=True)
class MetricReport:
    task: str
    n_valid_frames: int
    ccc_v: float | None = None
    ccc_a: float | None = None
    ccc_mean: float | None = None
    per_class_f1: tuple | None = None
    macro_f1: float | None = None

    def __post_init__(self):
        for v in (self.ccc_v, self.ccc_a, self.ccc_mean):
            if v is not None and not -1.0 <= v <= 1.0:
                raise ValidationError(f"ccc out of [-1, 1]: {v}")
        if self.per_class_f1 is not None:
            if any(not 0.0 <= f <= 1.0 for f in self.per_class_f1):
                raise ValidationError("per-class F1 outside [0, 1]")
            object.__setattr__(self, "per_class_f1", tuple(float(f) for f in self.per_class_f1))

    @property
    def primary_metric(self) -> float:
        return self.ccc_mean if self.task == "VA" else self.macro_f1


class F1Accumulator:
    """Per-class TP/FP/FN counts; works for one-vs-rest and per-unit F1."""

    def __init__(self, n_classes: int):
        if n_classes < 1:
            raise ValidationError(f"n_classes must be >= 1, got {n_classes}")
        self.n_classes = n_classes
        self.tp = np.zeros(n_classes, dtype=np.int64)
        self.fp = np.zeros(n_classes, dtype=np.int64)
        self.fn = np.zeros(n_classes, dtype=np.int64)
        self.n_valid = 0

    def update_multiclass(self, preds, targets, validity) -> None:
        preds = np.asarray(preds, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        validity = np.asarray(validity, dtype=bool)
        if preds.shape != targets.shape or preds.shape != validity.shape or preds.ndim != 1:
            raise ValidationError("preds/targets/validity must be aligned 1-d arrays")
        p = preds[validity]
        t = targets[validity]
        if p.size and (p.min() < 0 or p.max() >= self.n_classes):
            raise ValidationError(f"prediction class out of range 0..{self.n_classes - 1}")
        if t.size and (t.min() < 0 or t.max() >= self.n_classes):
            raise ValidationError(f"target class out of range 0..{self.n_classes - 1}")
        hit = p == t
        self.tp += np.bincount(t[hit], minlength=self.n_classes)
        self.fp += np.bincount(p[~hit], minlength=self.n_classes)
        self.fn += np.bincount(t[~hit], minlength=self.n_classes)
        self.n_valid += int(p.size)

    def update_multilabel(self, preds, targets, validity) -> None:
        preds = np.asarray(preds, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        validity = np.asarray(validity, dtype=bool)
        if (
            preds.ndim != 2
            or preds.shape[1] != self.n_classes
            or preds.shape != targets.shape
            or validity.shape != (preds.shape[0],)
        ):
            raise ValidationError("multilabel preds/targets must be (n, units), validity (n,)")
        p = preds[validity]
        t = targets[validity]
        if p.size and not np.isin(p, (0, 1)).all():
            raise ValidationError("multilabel predictions must be 0/1")
        if t.size and not np.isin(t, (0, 1)).all():
            raise ValidationError("multilabel targets must be 0/1")
        self.tp += ((p == 1) & (t == 1)).sum(axis=0)
        self.fp += ((p == 1) & (t == 0)).sum(axis=0)
        self.fn += ((p == 0) & (t == 1)).sum(axis=0)
        self.n_valid += int(p.shape[0])

    def merge(self, other: "F1Accumulator") -> "F1Accumulator":
        if other.n_classes != self.n_classes:
            raise ValidationError("cannot merge accumulators with different class counts")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.n_valid += other.n_valid
        return self

    def _fractions(self) -> list[Fraction]:
        # exact rationals from the integer counts; empty classes are 0
        out = []
        for c in range(self.n_classes):
            denom = 2 * int(self.tp[c]) + int(self.fp[c]) + int(self.fn[c])
            out.append(Fraction(2 * int(self.tp[c]), denom) if denom else Fraction(0))
        return out

    def per_class_f1(self) -> list[float]:
        return [float(f) for f in self._fractions()]

    def macro_f1(self) -> float:
        # sum exactly, round to float once, so e.g. {2/3, 4/5} -> 11/15 bit-exactly
        return float(sum(self._fractions(), Fraction(0)) / self.n_classes)


class CccAccumulator:
    """Streaming float64 moment sums for one prediction/target dimension."""

    def __init__(self):
        self.n = 0
        self.sx = 0.0
        self.sy = 0.0
        self.sxx = 0.0
        self.syy = 0.0
        self.sxy = 0.0

    def update(self, x, y) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.shape != y.shape:
            raise ValidationError("x/y length mismatch")
        self.n += x.size
        self.sx += float(x.sum())
        self.sy += float(y.sum())
        self.sxx += float((x * x).sum())
        self.syy += float((y * y).sum())
        self.sxy += float((x * y).sum())

    def merge(self, other: "CccAccumulator") -> "CccAccumulator":
        self.n += other.n
        self.sx += other.sx
        self.sy += other.sy
        self.sxx += other.sxx
        self.syy += other.syy
        self.sxy += other.sxy
        return self

    def ccc(self) -> float:
        if self.n < 2:
            raise InsufficientDataError(f"ccc needs >= 2 valid frames, got {self.n}")
        mx = self.sx / self.n
        my = self.sy / self.n
        var_x = self.sxx / self.n - mx * mx
        var_y = self.syy / self.n - my * my
        cov = self.sxy / self.n - mx * my
        denom = max(var_x + var_y + (mx - my) ** 2, CCC_DENOM_FLOOR)
        return 2.0 * cov / denom


def aggregate_va(ccc_v: float, ccc_a: float) -> float:
    """Mean of the two per-dimension coefficients."""
    return (ccc_v + ccc_a) / 2.0


def _as_video_list(arrays) -> list:
    if isinstance(arrays, (list, tuple)):
        return list(arrays)
    return [arrays]


def eval_va(preds, targets, validity, per_video: bool = False) -> MetricReport:
    """CCC report over valid frames.

    preds/targets are (n, 2) arrays or lists of per-video (n_i, 2) arrays;
    validity matches with (n,) bool arrays. Default is one pooled CCC over
    the concatenation of all videos; per_video=True instead averages
    per-video coefficients.
    """
    preds_l = _as_video_list(preds)
    targets_l = _as_video_list(targets)
    validity_l = _as_video_list(validity)
    if not len(preds_l) == len(targets_l) == len(validity_l):
        raise ValidationError("per-video list lengths disagree")

    if per_video:
        vs, as_ = [], []
        n_valid = 0
        for p, t, v in zip(preds_l, targets_l, validity_l):
            acc_v, acc_a, n = _va_accumulate(p, t, v)
            vs.append(acc_v.ccc())
            as_.append(acc_a.ccc())
            n_valid += n
        ccc_v = float(np.mean(vs))
        ccc_a = float(np.mean(as_))
    else:
        acc_v, acc_a = CccAccumulator(), CccAccumulator()
        n_valid = 0
        for p, t, v in zip(preds_l, targets_l, validity_l):
            av, aa, n = _va_accumulate(p, t, v)
            acc_v.merge(av)
            acc_a.merge(aa)
            n_valid += n
        ccc_v = acc_v.ccc()
        ccc_a = acc_a.ccc()
    return MetricReport(
        task="VA",
        n_valid_frames=n_valid,
        ccc_v=ccc_v,
        ccc_a=ccc_a,
        ccc_mean=aggregate_va(ccc_v, ccc_a),
    )


def _va_accumulate(preds, targets, validity):
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    validity = np.asarray(validity, dtype=bool)
    if preds.ndim != 2 or preds.shape[1] != 2 or preds.shape != targets.shape:
        raise ValidationError("VA preds/targets must be (n, 2)")
    if validity.shape != (preds.shape[0],):
        raise ValidationError("validity must be (n,)")
    acc_v, acc_a = CccAccumulator(), CccAccumulator()
    acc_v.update(preds[validity, 0], targets[validity, 0])
    acc_a.update(preds[validity, 1], targets[validity, 1])
    return acc_v, acc_a, int(validity.sum())


def eval_f1(preds, targets, validity, n_classes: int, task: str = "EXPR") -> MetricReport:
    """Macro F1 report; preds are class ids (1-d) or unit bits (2-d)."""
    preds_l = _as_video_list(preds)
    targets_l = _as_video_list(targets)
    validity_l = _as_video_list(validity)
    if not len(preds_l) == len(targets_l) == len(validity_l):
        raise ValidationError("per-video list lengths disagree")
    acc = F1Accumulator(n_classes)
    for p, t, v in zip(preds_l, targets_l, validity_l):
        if np.asarray(p).ndim == 2:
            acc.update_multilabel(p, t, v)
        else:
            acc.update_multiclass(p, t, v)
    return MetricReport(
        task=task,
        n_valid_frames=acc.n_valid,
        per_class_f1=tuple(acc.per_class_f1()),
        macro_f1=acc.macro_f1(),
    )


def predict_from_logits(task: str, yhat: np.ndarray) -> np.ndarray:
    """Model output -> challenge predictions (argmax class / >0 bits / raw VA)."""
    yhat = np.asarray(yhat)
    if task == "VA":
        return yhat
    if task == "EXPR":
        return yhat.argmax(axis=-1)
    if task == "AU":
        return (yhat > 0.0).astype(np.int64)
    raise ValidationError(f"unknown task '{task}'")


def assemble_predictions(windows: list, frames: int) -> np.ndarray:
    """Merge per-window frame predictions back into one per-video array.

    windows is a list of (start_frame, values) covering every frame, values
    holding only real (unpadded) rows. Overlapping frames are resolved by
    the later-starting window: windows are applied in ascending start order
    and later writes overwrite earlier ones.
    """
    if not windows:
        raise ValidationError("no windows to assemble")
    windows = sorted(windows, key=lambda w: w[0])
    first = np.asarray(windows[0][1])
    out = np.zeros((frames,) + first.shape[1:], dtype=first.dtype)
    covered = np.zeros(frames, dtype=bool)
    for start, values in windows:
        values = np.asarray(values)
        if start < 0 or start + values.shape[0] > frames:
            raise ValidationError(
                f"window [{start}, {start + values.shape[0]}) outside video of {frames} frames"
            )
        out[start : start + values.shape[0]] = values
        covered[start : start + values.shape[0]] = True
    if not covered.all():
        raise ValidationError(f"{int((~covered).sum())} frames left uncovered by windows")
    return out


def report_to_csv(report: MetricReport) -> str:
    """Stable metric,value rows; floats via repr for exact round-trips."""
    rows = [("task", report.task), ("n_valid_frames", str(report.n_valid_frames))]
    if report.task == "VA":
        rows += [
            ("ccc_v", repr(report.ccc_v)),
            ("ccc_a", repr(report.ccc_a)),
            ("ccc_mean", repr(report.ccc_mean)),
        ]
    else:
        rows += [(f"f1_{i}", repr(f)) for i, f in enumerate(report.per_class_f1)]
        rows += [("macro_f1", repr(report.macro_f1))]
    return "".join(f"{k},{v}\n" for k, v in rows)


def report_to_text(report: MetricReport) -> str:
    lines = [f"task: {report.task}", f"valid frames: {report.n_valid_frames}"]
    if report.task == "VA":
        lines += [
            f"CCC valence:  {report.ccc_v:.6f}",
            f"CCC arousal:  {report.ccc_a:.6f}",
            f"CCC mean:     {report.ccc_mean:.6f}",
        ]
    else:
        per = " ".join(f"{f:.4f}" for f in report.per_class_f1)
        lines += [f"per-class F1: {per}", f"macro F1:     {report.macro_f1:.6f}"]
    return "\n".join(lines) + "\n"


def write_predictions_csv(path: Path | str, task: str, preds: np.ndarray) -> None:
    """Per-frame prediction export: frame index + label-layout columns."""
    preds = np.asarray(preds)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i in range(preds.shape[0]):
            if task == "VA":
                writer.writerow([i] + [f"{v:.9g}" for v in preds[i]])
            elif task == "EXPR":
                writer.writerow([i, int(preds[i])])
            elif task == "AU":
                writer.writerow([i] + [int(v) for v in preds[i]])
            else:
                raise ValidationError(f"unknown task '{task}'")


__all__ = [
    "MetricReport",
    "F1Accumulator",
    "CccAccumulator",
    "aggregate_va",
    "eval_va",
    "eval_f1",
    "predict_from_logits",
    "assemble_predictions",
    "report_to_csv",
    "report_to_text",
    "write_predictions_csv",
    "NUM_AU",
    "NUM_EXPR_CLASSES",
]
