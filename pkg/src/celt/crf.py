"""Linear-chain CRF over slot tags: forward-algorithm NLL and Viterbi decoding.

Emissions are ``B x W x L`` tensors (a 2-D ``W x L`` input is treated as a
batch of one). ``mask`` marks real words; every unmasked row must start at
position 0 and be contiguous.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, logsumexp, where


def _batched(emissions: Tensor, tags=None, mask=None):
    if emissions.ndim == 2:
        emissions = emissions.reshape(1, *emissions.shape)
        if tags is not None:
            tags = np.asarray(tags, dtype=np.int64)[None, :]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[None, :]
    B, W, _ = emissions.shape
    if mask is None:
        mask = np.ones((B, W), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if tags is not None:
        tags = np.asarray(tags, dtype=np.int64)
        if tags.shape != (B, W):
            raise ShapeError(f"tags shape {tags.shape} does not match emissions {emissions.shape}")
    return emissions, tags, mask


def crf_log_partition(emissions: Tensor, transitions: Tensor, start: Tensor, end: Tensor,
                      mask=None) -> Tensor:
    """Per-sequence ``log Z`` by the forward algorithm, shape ``(B,)``."""
    emissions, _, mask = _batched(emissions, None, mask)
    B, W, L = emissions.shape
    alpha = start + emissions[:, 0, :]
    for t in range(1, W):
        scores = alpha.reshape(B, L, 1) + transitions + emissions[:, t, :].reshape(B, 1, L)
        nxt = logsumexp(scores, axis=1)
        alpha = where(mask[:, t : t + 1], nxt, alpha)
    return logsumexp(alpha + end, axis=1)


def crf_sequence_score(emissions: Tensor, tags, transitions: Tensor, start: Tensor, end: Tensor,
                       mask=None) -> Tensor:
    """Unnormalised score of the given tag paths, shape ``(B,)``."""
    emissions, tags, mask = _batched(emissions, tags, mask)
    B, W, L = emissions.shape
    m = mask.astype(emissions.dtype)
    onehot = np.zeros((B, W, L), dtype=emissions.dtype)
    np.put_along_axis(onehot, tags[..., None], 1.0, axis=-1)
    onehot *= m[..., None]
    score = (emissions * onehot).sum(axis=(1, 2))
    score = score + start[tags[:, 0]]
    if W > 1:
        pair = transitions[tags[:, :-1], tags[:, 1:]]
        score = score + (pair * m[:, 1:]).sum(axis=1)
    lengths = mask.sum(axis=1)
    last = tags[np.arange(B), np.maximum(lengths - 1, 0)]
    score = score + end[last]
    return score


def crf_negative_log_likelihood(emissions: Tensor, tags, transitions: Tensor, start: Tensor,
                                end: Tensor, mask=None) -> Tensor:
    """``sum_b (log Z_b - score_b(gold))``; sequences with no words contribute 0."""
    emissions, tags, mask = _batched(emissions, tags, mask)
    if emissions.shape[1] == 0:
        return Tensor(np.zeros((), dtype=emissions.dtype))
    log_z = crf_log_partition(emissions, transitions, start, end, mask)
    gold = crf_sequence_score(emissions, tags, transitions, start, end, mask)
    has_words = mask[:, 0].astype(emissions.dtype)
    return ((log_z - gold) * has_words).sum()


def crf_decode(emissions, transitions, start, end) -> list[int]:
    """Viterbi path for one ``W x L`` emission matrix; ties go to the lower tag id."""
    em = np.asarray(getattr(emissions, "data", emissions), dtype=np.float64)
    trans = np.asarray(getattr(transitions, "data", transitions), dtype=np.float64)
    st = np.asarray(getattr(start, "data", start), dtype=np.float64)
    en = np.asarray(getattr(end, "data", end), dtype=np.float64)
    W, L = em.shape
    if W == 0:
        return []
    score = st + em[0]
    back = np.zeros((W, L), dtype=np.int64)
    for t in range(1, W):
        cand = score[:, None] + trans
        back[t] = cand.argmax(axis=0)
        score = cand[back[t], np.arange(L)] + em[t]
    score = score + en
    best = int(score.argmax())
    path = [best]
    for t in range(W - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    return path[::-1]


def path_score(emissions, tags, transitions, start, end) -> float:
    """Plain-numpy score of one path; used by decoding checks."""
    em = np.asarray(getattr(emissions, "data", emissions), dtype=np.float64)
    trans = np.asarray(getattr(transitions, "data", transitions))
    st = np.asarray(getattr(start, "data", start))
    en = np.asarray(getattr(end, "data", end))
    s = st[tags[0]] + en[tags[-1]] + sum(em[i, t] for i, t in enumerate(tags))
    s += sum(trans[a, b] for a, b in zip(tags, tags[1:]))
    return float(s)
