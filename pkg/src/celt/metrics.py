"""SLU metrics: intent accuracy, user-act F1, span-exact slot F1, frame accuracy."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .data import SemanticFrame


def _check_aligned(pred: Sequence, gold: Sequence) -> None:
    if len(pred) != len(gold):
        raise ValueError(f"prediction/gold length mismatch: {len(pred)} vs {len(gold)}")


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def intent_accuracy(pred: Sequence[str], gold: Sequence[str]) -> float:
    _check_aligned(pred, gold)
    if not gold:
        raise ValueError("intent accuracy of an empty list is undefined")
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def slot_counts(pred: Sequence[SemanticFrame], gold: Sequence[SemanticFrame]) -> dict[str, Counter]:
    """Per-slot TP/FP/FN counts under exact (slot, start, end) matching."""
    _check_aligned(pred, gold)
    counts: dict[str, Counter] = {}
    for p, g in zip(pred, gold):
        ps, gs = set(p.slots), set(g.slots)
        for span in ps | gs:
            c = counts.setdefault(span.slot, Counter())
            if span in ps and span in gs:
                c["tp"] += 1
            elif span in ps:
                c["fp"] += 1
            else:
                c["fn"] += 1
    return counts


def slot_f1(pred: Sequence[SemanticFrame], gold: Sequence[SemanticFrame]) -> tuple[float, float, float]:
    """Micro-averaged span-exact precision, recall and F1."""
    total = Counter()
    for c in slot_counts(pred, gold).values():
        total.update(c)
    return prf(total["tp"], total["fp"], total["fn"])


def user_act_f1(pred: Sequence[frozenset], gold: Sequence[frozenset]) -> tuple[float, float, float]:
    """Micro-averaged over (example, act) pairs."""
    _check_aligned(pred, gold)
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        p, g = set(p), set(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    return prf(tp, fp, fn)


def frame_accuracy(pred: Sequence[SemanticFrame], gold: Sequence[SemanticFrame],
                   include_acts: bool = True) -> float:
    _check_aligned(pred, gold)
    if not gold:
        raise ValueError("frame accuracy of an empty list is undefined")
    hits = 0
    for p, g in zip(pred, gold):
        ok = p.intent == g.intent and set(p.slots) == set(g.slots)
        if include_acts:
            ok = ok and set(p.user_acts) == set(g.user_acts)
        hits += ok
    return hits / len(gold)


@dataclass
class MetricsReport:
    intent_accuracy: float
    user_act_precision: float
    user_act_recall: float
    user_act_f1: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    frame_accuracy: float
    per_slot: dict = field(default_factory=dict)
    example_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def build_report(pred: Sequence[SemanticFrame], gold: Sequence[SemanticFrame],
                 include_acts: bool = True) -> MetricsReport:
    _check_aligned(pred, gold)
    if not gold:
        raise ValueError("cannot report on zero examples")
    per_slot = {}
    for name, c in sorted(slot_counts(pred, gold).items()):
        p, r, f = prf(c["tp"], c["fp"], c["fn"])
        per_slot[name] = {"tp": c["tp"], "fp": c["fp"], "fn": c["fn"],
                          "precision": p, "recall": r, "f1": f}
    if include_acts:
        ap, ar, af = user_act_f1([p.user_acts for p in pred], [g.user_acts for g in gold])
    else:
        ap = ar = af = 0.0
    sp, sr, sf = slot_f1(pred, gold)
    return MetricsReport(
        intent_accuracy=intent_accuracy([p.intent for p in pred], [g.intent for g in gold]),
        user_act_precision=ap,
        user_act_recall=ar,
        user_act_f1=af,
        slot_precision=sp,
        slot_recall=sr,
        slot_f1=sf,
        frame_accuracy=frame_accuracy(pred, gold, include_acts),
        per_slot=per_slot,
        example_count=len(gold),
    )
