"""Per-pixel confusion counts, precision/recall and the convergence rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

CONVERGENCE_THRESHOLD = 0.5


def confusion_counts(pred, truth, class_id: int) -> tuple[int, int, int]:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    p, t = pred == class_id, truth == class_id
    tp = int(np.count_nonzero(p & t))
    return tp, int(np.count_nonzero(p)) - tp, int(np.count_nonzero(t)) - tp


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Empty prediction gives precision 0; empty truth gives recall 1."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    return precision, recall


def compute_metrics(pred, truth, class_id: int):
    tp, fp, fn = confusion_counts(pred, truth, class_id)
    p, r = precision_recall(tp, fp, fn)
    return p, r, {"tp": tp, "fp": fp, "fn": fn}


def is_converged(precision: float, recall: float) -> bool:
    return precision > CONVERGENCE_THRESHOLD and recall > CONVERGENCE_THRESHOLD


@dataclass
class MetricsReport:
    """Counts pooled over a whole image set, one ratio per class.

    ``per_image`` keeps the focus class's per-image precision/recall, whose
    means are reported alongside the pooled values.
    """
    class_names: dict[int, str]
    counts: dict[int, dict] = field(default_factory=dict)
    per_image: list[dict] = field(default_factory=list)
    focus_class: int = 1

    @classmethod
    def from_predictions(cls, preds, truths, class_names: dict[int, str], focus_class: int = 1) -> MetricsReport:
        preds, truths = np.asarray(preds), np.asarray(truths)
        if preds.shape != truths.shape:
            raise ShapeMismatch(f"prediction {preds.shape} vs truth {truths.shape}")
        rep = cls(dict(class_names), focus_class=focus_class)
        for c in class_names:
            rep.counts[c] = {"tp": 0, "fp": 0, "fn": 0}
        for pred, truth in zip(preds, truths):
            for c in class_names:
                tp, fp, fn = confusion_counts(pred, truth, c)
                acc = rep.counts[c]
                acc["tp"] += tp
                acc["fp"] += fp
                acc["fn"] += fn
                if c == focus_class:
                    p, r = precision_recall(tp, fp, fn)
                    rep.per_image.append({"tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r})
        return rep

    def precision(self, c: int | None = None) -> float:
        k = self.counts[self.focus_class if c is None else c]
        return precision_recall(k["tp"], k["fp"], k["fn"])[0]

    def recall(self, c: int | None = None) -> float:
        k = self.counts[self.focus_class if c is None else c]
        return precision_recall(k["tp"], k["fp"], k["fn"])[1]

    @property
    def converged(self) -> bool:
        return is_converged(self.precision(), self.recall())

    @property
    def per_image_precision(self) -> float:
        return float(np.mean([e["precision"] for e in self.per_image])) if self.per_image else 0.0

    @property
    def per_image_recall(self) -> float:
        return float(np.mean([e["recall"] for e in self.per_image])) if self.per_image else 1.0

    def to_dict(self) -> dict:
        return {
            "focus_class": self.focus_class,
            "class_names": {str(k): v for k, v in self.class_names.items()},
            "counts": {str(k): dict(v) for k, v in self.counts.items()},
            "precision": {str(c): self.precision(c) for c in self.counts},
            "recall": {str(c): self.recall(c) for c in self.counts},
            "per_image": self.per_image,
            "per_image_mean": {"precision": self.per_image_precision, "recall": self.per_image_recall},
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        return cls(class_names={int(k): v for k, v in d["class_names"].items()},
                   counts={int(k): dict(v) for k, v in d["counts"].items()},
                   per_image=list(d["per_image"]), focus_class=int(d["focus_class"]))

    def rows(self) -> list[dict]:
        out = []
        for c, k in self.counts.items():
            out.append({"class_index": c, "class": self.class_names[c], **k,
                        "precision": self.precision(c), "recall": self.recall(c)})
        return out
