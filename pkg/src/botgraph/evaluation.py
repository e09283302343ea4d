"""Ranking metrics, the 1%-FPR operating threshold, and fold machinery."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import FoldTooSmall, SingleClass


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties contribute 0.5, matching the O(n^2) pairwise definition.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


class ThresholdPick(NamedTuple):
    threshold: float
    fpr: float
    feasible: bool


def pick_threshold(scores, labels, target_fpr: float = 0.01) -> ThresholdPick:
    """Smallest observed score value whose FPR stays within the target.

    Flag rule is score >= threshold, so this is the most permissive (highest
    recall) operating point with FPR <= target_fpr. When even flagging only
    the single top score exceeds the budget, the +inf sentinel comes back
    with feasible=False and nothing is flagged.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    neg = np.sort(scores[labels == 0])
    if neg.size == 0:
        raise SingleClass("threshold selection needs negatives")
    candidates = np.unique(scores)
    # FPR(t) = #(neg >= t) / n_neg, non-increasing in t.
    fprs = (neg.size - np.searchsorted(neg, candidates, side="left")) / neg.size
    ok = fprs <= target_fpr
    if not ok.any():
        return ThresholdPick(np.inf, 0.0, False)
    i = int(np.argmax(ok))  # candidates ascending; first qualifying = smallest
    return ThresholdPick(float(candidates[i]), float(fprs[i]), True)


def prf_at(scores, labels, threshold: float) -> tuple[float, float, float]:
    """Precision/recall/F1 with flag rule score >= threshold (0-safe)."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    flagged = scores >= threshold
    tp = int((flagged & (labels == 1)).sum())
    fp = int((flagged & (labels == 0)).sum())
    n_pos = int((labels == 1).sum())
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / n_pos if n_pos > 0 else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if (precision + recall) > 0 else 0.0)
    return precision, recall, f1


@dataclass
class EvalReport:
    """AUC plus the operating-point metrics at the validation threshold."""

    auc: float
    threshold: float
    precision: float
    recall: float
    f1: float
    fpr_at_threshold: float
    threshold_feasible: bool = True
    per_seed: list = field(default_factory=list)
    per_fold: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "auc": self.auc, "threshold": self.threshold,
            "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "fpr_at_threshold": self.fpr_at_threshold,
            "threshold_feasible": self.threshold_feasible,
            "per_seed": self.per_seed, "per_fold": self.per_fold,
        }


def evaluate(val_scores, val_labels, test_scores, test_labels,
             target_fpr: float = 0.01) -> EvalReport:
    """Pick the threshold on validation, freeze it, report on test."""
    pick = pick_threshold(val_scores, val_labels, target_fpr)
    test_scores = np.asarray(test_scores, dtype=float)
    test_labels = np.asarray(test_labels)
    if pick.feasible:
        precision, recall, f1 = prf_at(test_scores, test_labels, pick.threshold)
        flagged_neg = (test_scores[test_labels == 0] >= pick.threshold).sum()
        n_neg = int((test_labels == 0).sum())
        fpr = flagged_neg / n_neg if n_neg else 0.0
    else:
        precision = recall = f1 = 0.0
        fpr = 0.0
    return EvalReport(auc=auc(test_scores, test_labels),
                      threshold=pick.threshold,
                      precision=precision, recall=recall, f1=f1,
                      fpr_at_threshold=float(fpr),
                      threshold_feasible=pick.feasible)


def stratified_folds(labels: Sequence[int], n_folds: int = 5,
                     seed: int = 0) -> list[np.ndarray]:
    """Index folds with near-identical class proportions (fixed seed)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < n_folds:
            raise FoldTooSmall(
                f"class {cls} has {idx.size} items for {n_folds} folds")
        idx = rng.permutation(idx)
        for i, j in enumerate(idx):
            folds[i % n_folds].append(int(j))
    return [np.asarray(sorted(f), dtype=np.int64) for f in folds]


def stratified_holdout(items: Sequence[int], labels: Sequence[int],
                       frac: float, seed: int = 0
                       ) -> tuple[list[int], list[int]]:
    """Split items into (rest, holdout) preserving class balance."""
    items = list(items)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    hold: set[int] = set()
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        take = max(1, int(round(frac * idx.size))) if idx.size else 0
        hold.update(int(i) for i in idx[:take])
    rest = [items[i] for i in range(len(items)) if i not in hold]
    held = [items[i] for i in sorted(hold)]
    return rest, held


@dataclass
class CrossvalResult:
    reports: list[EvalReport]
    auc_mean: float
    auc_std: float

    def metric_summary(self) -> dict[str, tuple[float, float]]:
        out = {}
        for name in ("auc", "precision", "recall", "f1"):
            vals = np.array([getattr(r, name) for r in self.reports])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[name] = (float(vals.mean()), std)
        return out


def crossval(run_fold: Callable[[int, np.ndarray, np.ndarray], EvalReport],
             labels: Sequence[int], n_folds: int = 5,
             seed: int = 0) -> CrossvalResult:
    """Stratified k-fold driver; aggregates mean and sample (n-1) std.

    ``run_fold(fold_id, train_idx, test_idx)`` trains and evaluates one
    fold; indices are positions into ``labels``.
    """
    folds = stratified_folds(labels, n_folds=n_folds, seed=seed)
    all_idx = np.arange(len(labels))
    reports = []
    for k, test_idx in enumerate(folds):
        train_mask = np.ones(len(labels), dtype=bool)
        train_mask[test_idx] = False
        reports.append(run_fold(k, all_idx[train_mask], test_idx))
    aucs = np.array([r.auc for r in reports])
    std = float(aucs.std(ddof=1)) if len(aucs) > 1 else 0.0
    return CrossvalResult(reports=reports, auc_mean=float(aucs.mean()),
                          auc_std=std)


def temporal_split(order_values: Sequence[float], val_frac: float = 0.1,
                   test_frac: float = 0.1
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chronological train/val/test index split (test is latest)."""
    order = np.argsort(np.asarray(order_values), kind="stable")
    n = len(order)
    n_test = max(1, int(round(test_frac * n)))
    n_val = max(1, int(round(val_frac * n)))
    test = order[n - n_test:]
    val = order[n - n_test - n_val:n - n_test]
    train = order[:n - n_test - n_val]
    return (np.sort(train), np.sort(val), np.sort(test))


def report_table(rows: dict[str, EvalReport]) -> str:
    """Plain-text table with one row per model."""
    header = f"{'Model':<28} {'AUC':>8} {'Precision':>10} {'Recall':>8} {'F1':>8}"
    lines = [header, "-" * len(header)]
    for name, r in rows.items():
        lines.append(f"{name:<28} {r.auc:>8.4f} {r.precision:>10.4f} "
                     f"{r.recall:>8.4f} {r.f1:>8.4f}")
    return "\n".join(lines)
