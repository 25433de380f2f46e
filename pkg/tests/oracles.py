"""Independent reference implementations shared by unit and acceptance tests."""

import numpy as np

from celt.data import SemanticFrame, SlotSpan

INTENTS = ("book", "find", "cancel")
ACTS = ("inform", "request", "affirm", "negate")
SLOTS = ("date", "time", "name")


def random_frame(rng, n_words=8):
    """A frame with non-overlapping spans over ``n_words`` words."""
    spans, pos = [], 0
    while pos < n_words:
        if rng.random() < 0.35:
            end = min(n_words, pos + int(rng.integers(1, 3)))
            spans.append(SlotSpan(SLOTS[int(rng.integers(len(SLOTS)))], pos, end))
            pos = end
        else:
            pos += 1
    acts = frozenset(a for a in ACTS if rng.random() < 0.3)
    return SemanticFrame(INTENTS[int(rng.integers(len(INTENTS)))], acts, tuple(spans))


def perturb(frame, rng):
    """A prediction that partly agrees with ``frame``."""
    intent = frame.intent if rng.random() < 0.7 else INTENTS[int(rng.integers(len(INTENTS)))]
    acts = frozenset(a for a in ACTS if (a in frame.user_acts) != (rng.random() < 0.2))
    spans = tuple(s for s in frame.slots if rng.random() < 0.7)
    if rng.random() < 0.3:
        spans = spans + (SlotSpan(SLOTS[int(rng.integers(len(SLOTS)))], 8, 9),)
    return SemanticFrame(intent, acts, spans)


def random_corpus_pair(seed, size=None):
    rng = np.random.default_rng(seed)
    n = size or int(rng.integers(1, 30))
    gold = [random_frame(rng) for _ in range(n)]
    pred = [perturb(g, rng) for g in gold]
    return pred, gold


def ratio(a, b):
    return a / b if b else 0.0


def oracle_f1(p, r):
    return ratio(2 * p * r, p + r)


def oracle_slot_prf(pred, gold):
    """Count matches span by span with plain list membership."""
    tp = sum(1 for p, g in zip(pred, gold) for s in p.slots if s in g.slots)
    n_pred = sum(len(p.slots) for p in pred)
    n_gold = sum(len(g.slots) for g in gold)
    prec, rec = ratio(tp, n_pred), ratio(tp, n_gold)
    return prec, rec, oracle_f1(prec, rec)


def oracle_act_prf(pred, gold):
    """Micro F1 over a flattened table of (example, act) decisions."""
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        for act in ACTS:
            tp += act in p.user_acts and act in g.user_acts
            fp += act in p.user_acts and act not in g.user_acts
            fn += act not in p.user_acts and act in g.user_acts
    prec, rec = ratio(tp, tp + fp), ratio(tp, tp + fn)
    return prec, rec, oracle_f1(prec, rec)


def oracle_intent_accuracy(pred, gold):
    return np.mean([p.intent == g.intent for p, g in zip(pred, gold)])


def oracle_frame_accuracy(pred, gold):
    return np.mean([p.intent == g.intent and p.user_acts == g.user_acts
                    and sorted(p.slots) == sorted(g.slots) for p, g in zip(pred, gold)])
