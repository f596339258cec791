"""Accuracy, confusion counts, ROC/AUC, and misclassification listings.

Two independent AUC routes are kept on purpose: the ROC trapezoid and a
direct mean over positive/negative score pairs.  They must agree to
floating-point noise on any input, which the tests enforce.
"""

from dataclasses import dataclass

import numpy as np


class UndefinedAUCError(ValueError):
    """AUC needs at least one positive and one negative example."""


@dataclass
class EvalReport:
    n_pos: int
    n_neg: int
    threshold: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    roc_points: list | None = None
    auc: float | None = None


def _check_scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ValueError("scores must be non-empty")
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores vs {labels.size} labels")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    if np.any(scores < 0) or np.any(scores > 1):
        raise ValueError("scores must lie in [0, 1]")
    return scores, labels.astype(np.int64)


def accuracy_at(scores, labels, threshold=0.5):
    """Confusion counts and accuracy; score >= threshold predicts positive."""
    scores, labels = _check_scores_labels(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return EvalReport(n_pos=int(pos.sum()), n_neg=int((~pos).sum()), threshold=threshold,
                      accuracy=(tp + tn) / scores.size, tp=tp, fp=fp, tn=tn, fn=fn)


def roc_auc(scores, labels):
    """ROC points swept over the distinct scores, and the trapezoid AUC.

    Points run from (0, 0) at an above-everything threshold to (1, 1),
    in descending threshold order; tied scores advance tp and fp
    together, which makes the trapezoid credit ties by half.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("need both classes to sweep an ROC curve")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += (j - i) - int(y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def auc_pairwise_oracle(scores, labels):
    """Mean over all (pos, neg) pairs of [pos > neg] + 0.5 [pos == neg].

    Independent of the ROC sweep; kept as its cross-check.
    """
    scores, labels = _check_scores_labels(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUCError("need both classes to compare score pairs")
    wins = np.sum(pos[:, None] > neg[None, :], dtype=np.float64)
    ties = np.sum(pos[:, None] == neg[None, :], dtype=np.float64)
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def evaluate(scores, labels, threshold=0.5):
    """Full report: confusion counts plus ROC curve and AUC."""
    report = accuracy_at(scores, labels, threshold)
    report.roc_points, report.auc = roc_auc(scores, labels)
    return report


def misclassification_export(rows, scores, threshold=0.5):
    """(id, label, score, kind) for every FP and FN, most confident first.

    rows are manifest records aligned with scores.  kind is FP for an
    undamaged building predicted damaged, FN for the converse; ordering
    is by |score - threshold| descending (id breaks exact ties).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if len(rows) != scores.size:
        raise ValueError(f"{len(rows)} rows vs {scores.size} scores")
    out = []
    for row, score in zip(rows, scores):
        predicted_damaged = score >= threshold
        if row.label == "undamaged" and predicted_damaged:
            out.append((row.id, row.label, float(score), "FP"))
        elif row.label == "damaged" and not predicted_damaged:
            out.append((row.id, row.label, float(score), "FN"))
    out.sort(key=lambda r: (-abs(r[2] - threshold), r[0]))
    return out


def write_roc_csv(points, path):
    with open(path, "w", newline="") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in points:
            fh.write(f"{fpr:.9f},{tpr:.9f}\n")


def write_report(report, path):
    """Flat key=value dump of an EvalReport."""
    lines = [
        f"n_pos={report.n_pos}",
        f"n_neg={report.n_neg}",
        f"threshold={report.threshold}",
        f"accuracy={report.accuracy:.6f}",
        f"tp={report.tp}",
        f"fp={report.fp}",
        f"tn={report.tn}",
        f"fn={report.fn}",
    ]
    if report.auc is not None:
        lines.append(f"auc={report.auc:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_misclassifications(rows, path):
    """CSV of misclassification_export output: id,label,score,kind."""
    with open(path, "w", newline="") as fh:
        fh.write("id,label,score,kind\n")
        for rid, label, score, kind in rows:
            fh.write(f"{rid},{label},{score:.6f},{kind}\n")
