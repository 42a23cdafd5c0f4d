"""Rationale and task metrics.

Token-level precision/recall/F1 for rationales is micro-aggregated over
a corpus: counts of matched, predicted, and gold tokens are summed first
and ratios taken once.  Undefined ratios (0/0) are reported as zero.
Classification adds accuracy and macro-averaged P/R/F1 over the classes
present in the gold labels; regression reports mean squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class RationaleScore:
    precision: float
    recall: float
    f1: float
    selection_pct: float


@dataclass
class TaskScore:
    mode: str
    accuracy: float | None = None
    macro_precision: float | None = None
    macro_recall: float | None = None
    macro_f1: float | None = None
    mse: float | None = None


def _ratio(num: float, denom: float) -> float:
    return num / denom if denom > 0 else 0.0


def _prf(matched: float, n_pred: float, n_gold: float) -> tuple[float, float, float]:
    p = _ratio(matched, n_pred)
    r = _ratio(matched, n_gold)
    f1 = _ratio(2 * p * r, p + r)
    return p, r, f1


def rationale_prf(pred_mask, gold_mask) -> RationaleScore:
    """Token-level P/R/F1 for one instance (masks over real tokens only)."""
    pred = np.asarray(pred_mask, dtype=np.int64)
    gold = np.asarray(gold_mask, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ContractViolation(
            f"mask lengths differ: predicted {pred.shape}, gold {gold.shape}"
        )
    if pred.size and (pred.min() < 0 or pred.max() > 1 or gold.min() < 0 or gold.max() > 1):
        raise ContractViolation("rationale masks must be 0/1 flags")
    matched = int((pred & gold).sum())
    p, r, f1 = _prf(matched, int(pred.sum()), int(gold.sum()))
    return RationaleScore(p, r, f1, selection_pct=_ratio(int(pred.sum()), pred.size))


def corpus_rationale_score(pairs) -> RationaleScore:
    """Micro-aggregated rationale score over (pred, gold) mask pairs."""
    matched = n_pred = n_gold = n_tok = 0
    for pred_mask, gold_mask in pairs:
        pred = np.asarray(pred_mask, dtype=np.int64)
        gold = np.asarray(gold_mask, dtype=np.int64)
        if pred.shape != gold.shape:
            raise ContractViolation("mask lengths differ within the corpus")
        matched += int((pred & gold).sum())
        n_pred += int(pred.sum())
        n_gold += int(gold.sum())
        n_tok += pred.size
    p, r, f1 = _prf(matched, n_pred, n_gold)
    return RationaleScore(p, r, f1, selection_pct=_ratio(n_pred, n_tok))


def selection_pct(masks) -> float:
    """Fraction of tokens selected across a corpus of masks."""
    chosen = total = 0
    for m in masks:
        m = np.asarray(m)
        chosen += int(m.sum())
        total += m.size
    return _ratio(chosen, total)


def task_metrics(preds, golds, mode: str) -> TaskScore:
    """Accuracy and macro P/R/F1 for classification, MSE for regression.

    Macro averages run over classes that occur in the gold labels;
    classes nobody predicted contribute zero precision.
    """
    if mode == "regression":
        p = np.asarray(preds, dtype=float)
        g = np.asarray(golds, dtype=float)
        if p.shape != g.shape:
            raise ContractViolation("prediction/label counts differ")
        return TaskScore(mode=mode, mse=float(np.mean((p - g) ** 2)))
    if mode != "classification":
        raise ContractViolation(f"unknown mode {mode!r}")
    p = np.asarray(preds, dtype=np.int64)
    g = np.asarray(golds, dtype=np.int64)
    if p.shape != g.shape:
        raise ContractViolation("prediction/label counts differ")
    acc = float(np.mean(p == g)) if p.size else 0.0
    precs, recs, f1s = [], [], []
    for c in np.unique(g):
        tp = int(((p == c) & (g == c)).sum())
        prec, rec, f1 = _prf(tp, int((p == c).sum()), int((g == c).sum()))
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    return TaskScore(
        mode=mode,
        accuracy=acc,
        macro_precision=float(np.mean(precs)),
        macro_recall=float(np.mean(recs)),
        macro_f1=float(np.mean(f1s)),
    )
