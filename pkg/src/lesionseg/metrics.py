"""Confusion-matrix segmentation metrics and report serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

METRIC_FIELDS = ("accuracy", "precision", "recall", "sensitivity",
                 "specificity", "f_measure", "jaccard", "mcc")
COUNT_FIELDS = ("tp", "fp", "fn", "tn")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred, gt, threshold: float = 0.5) -> ConfusionMatrix:
    """Binarize a probability map at ``threshold`` and count pixel outcomes."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    g = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    pos = p >= threshold
    truth = g >= 0.5
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    tn = int(np.count_nonzero(~pos & ~truth))
    return ConfusionMatrix(tp, fp, fn, tn)


@dataclass(frozen=True)
class Metrics:
    """The eight similarity scores plus the set of degenerate (0/0) ones."""
    accuracy: float
    precision: float
    recall: float
    sensitivity: float
    specificity: float
    f_measure: float
    jaccard: float
    mcc: float
    degenerate: frozenset[str] = frozenset()

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


def metric_suite(c: ConfusionMatrix) -> Metrics:
    """Similarity measures of a 2x2 pixel confusion matrix.

    Specificity is TN/(TN+FP). Ratios with a zero denominator come back
    as 0 and are listed in ``degenerate``.
    """
    degenerate: set[str] = set()

    def ratio(name: str, num: int, den: int) -> float:
        if den == 0:
            degenerate.add(name)
            return 0.0
        return num / den

    recall = ratio("recall", c.tp, c.tp + c.fn)
    mcc_den_sq = ((c.tp + c.fp) * (c.tp + c.fn)
                  * (c.tn + c.fp) * (c.tn + c.fn))
    if mcc_den_sq == 0:
        degenerate.add("mcc")
        mcc = 0.0
    else:
        mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(mcc_den_sq)
        mcc = max(-1.0, min(1.0, mcc))  # guard float round-off only
    return Metrics(
        accuracy=ratio("accuracy", c.tp + c.tn, c.total),
        precision=ratio("precision", c.tp, c.tp + c.fp),
        recall=recall,
        sensitivity=recall,
        specificity=ratio("specificity", c.tn, c.tn + c.fp),
        f_measure=ratio("f_measure", 2 * c.tp, 2 * c.tp + c.fp + c.fn),
        jaccard=ratio("jaccard", c.tp, c.tp + c.fn + c.fp),
        mcc=mcc,
        degenerate=frozenset(degenerate),
    )


def report_row(m: Metrics, c: ConfusionMatrix,
               sample_id: str = "aggregate") -> dict:
    row: dict = {"id": sample_id}
    row.update({k: float(v) for k, v in m.as_dict().items()})
    row.update({"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn})
    return row


def write_report(rows: list[dict], csv_path: Path | str | None = None,
                 json_path: Path | str | None = None) -> None:
    """Emit metric rows as CSV and/or JSON with the fixed field layout."""
    fields = ["id", *METRIC_FIELDS, *COUNT_FIELDS]
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
