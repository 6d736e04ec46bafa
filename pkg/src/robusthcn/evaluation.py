"""Per-utterance accuracy on label subsets and fallback-as-detector F1.

Predictions are scored per user turn against gold action ids.  Subset
accuracies are restricted by OOD label; the F1 treats a fallback
prediction as a positive OOD call and a TURN_OOD gold label as a positive
OOD turn, so it measures the model as a conventional OOD detector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .corpus import OodLabel
from .models import check_compatible, predict_dialog


class OodF1(NamedTuple):
    precision: float
    recall: float
    f1: float
    degenerate: bool


@dataclass
class MetricsRow:
    """One evaluation record; subset accuracies are None when the subset is empty."""

    overall_acc: float
    seg_ood_acc: float | None
    ood_acc: float | None
    ood_precision: float
    ood_recall: float
    ood_f1: float
    f1_degenerate: bool
    n_turns: int
    n_ind: int
    n_segment: int
    n_ood: int

    def to_kv(self, prefix=""):
        def fmt(v):
            if v is None:
                return "absent"
            if isinstance(v, bool):
                return str(v).lower()
            if isinstance(v, float):
                return "%.6f" % v
            return str(v)

        keys = (
            "overall_acc", "seg_ood_acc", "ood_acc", "ood_precision",
            "ood_recall", "ood_f1", "f1_degenerate", "n_turns", "n_ind",
            "n_segment", "n_ood",
        )
        return ["%s%s = %s" % (prefix, k, fmt(getattr(self, k))) for k in keys]


def per_utterance_accuracy(predictions, golds, labels=None, subset="all"):
    """Fraction of turns in the subset whose prediction matches gold.

    ``subset`` is "all" or an :class:`OodLabel`; an empty subset yields
    None (absent), never 0.
    """
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds are not aligned")
    if subset != "all":
        if labels is None or len(labels) != len(golds):
            raise ValueError("subset accuracy needs aligned labels")
        pairs = [(p, g) for p, g, lab in zip(predictions, golds, labels) if lab is subset]
    else:
        pairs = list(zip(predictions, golds))
    if not pairs:
        return None
    return sum(int(p == g) for p, g in pairs) / len(pairs)


def ood_f1(predictions, labels, fallback_id):
    """Precision/recall/F1 of fallback prediction as an OOD detector.

    Positive prediction: the model chose the fallback action.  Positive
    gold: the turn is labeled TURN_OOD.  Zero-denominator cases yield a
    0.0 score with the degenerate flag set.
    """
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels are not aligned")
    tp = fp = fn = 0
    for pred, label in zip(predictions, labels):
        pred_pos = pred == fallback_id
        gold_pos = label is OodLabel.TURN_OOD
        if pred_pos and gold_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif gold_pos:
            fn += 1
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return OodF1(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def evaluate_predictions(predictions, golds, labels, fallback_id):
    """All metric fields from aligned flat prediction/gold/label vectors."""
    f1 = ood_f1(predictions, labels, fallback_id)
    return MetricsRow(
        overall_acc=per_utterance_accuracy(predictions, golds),
        seg_ood_acc=per_utterance_accuracy(predictions, golds, labels, OodLabel.SEGMENT_OOD),
        ood_acc=per_utterance_accuracy(predictions, golds, labels, OodLabel.TURN_OOD),
        ood_precision=f1.precision,
        ood_recall=f1.recall,
        ood_f1=f1.f1,
        f1_degenerate=f1.degenerate,
        n_turns=len(golds),
        n_ind=sum(1 for lab in labels if lab is OodLabel.IND),
        n_segment=sum(1 for lab in labels if lab is OodLabel.SEGMENT_OOD),
        n_ood=sum(1 for lab in labels if lab is OodLabel.TURN_OOD),
    )


def evaluate_model(model, featurized_dialogs, vocab=None, action_set=None):
    """Run the model over featurized dialogs and score every user turn.

    Deterministic: repeated evaluation of one checkpoint is bit-identical.
    Pass the vocabulary/action set used for featurization to enforce the
    checkpoint hash check.
    """
    if vocab is not None and action_set is not None:
        check_compatible(model, vocab, action_set)
    predictions = []
    golds = []
    labels = []
    for dialog in featurized_dialogs:
        predictions.extend(predict_dialog(model, dialog))
        golds.extend(t.target for t in dialog)
        labels.extend(t.ood_label for t in dialog)
    return evaluate_predictions(predictions, golds, labels, model.action_set.fallback_action_id)


_TABLE_COLUMNS = (
    ("model", "Model"),
    ("plain.overall_acc", "IND overall"),
    ("augmented.overall_acc", "Overall"),
    ("augmented.seg_ood_acc", "Seg OOD"),
    ("augmented.ood_acc", "OOD"),
    ("augmented.ood_f1", "OOD F1"),
)


def parse_report(text):
    record = {}
    for line in text.split("\n"):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" = ")
        record[key] = value
    return record


def read_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_report(fh.read())


def format_report_table(records):
    """Aggregate per-model report records into aligned text rows."""
    rows = [[header for _, header in _TABLE_COLUMNS]]
    for record in records:
        row = []
        for key, _ in _TABLE_COLUMNS:
            row.append(record.get(key, "-"))
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(_TABLE_COLUMNS))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return lines


def format_report_csv(records):
    lines = [",".join(key for key, _ in _TABLE_COLUMNS)]
    for record in records:
        lines.append(",".join(record.get(key, "") for key, _ in _TABLE_COLUMNS))
    return lines
