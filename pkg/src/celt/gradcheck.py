"""Finite-difference gradient suite for the autodiff primitives and the model losses.

Everything runs in float64 with dropout off. Each check returns
``{label: relative error}`` as computed by :func:`autodiff.gradient_check`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradient_check
from .crf import crf_negative_log_likelihood
from .data import ModelInput
from .model import ModelConfig, collate, embed_input, encode, forward, init_parameters, joint_loss
from .seeding import substream
from .training import pretrain_loss

TOLERANCE = 1e-4


def _leaf(rng, *shape, scale=1.0, name=None):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, dtype=np.float64, name=name)


def operation_checks(seed: int = 0) -> dict[str, float]:
    """One or more checks per differentiable primitive."""
    rng = substream(seed, "gradcheck.ops")
    errors: dict[str, float] = {}

    def record(label, fn, params):
        for name, err in gradient_check(fn, params).items():
            errors[f"{label}/{name}"] = err

    a, b = _leaf(rng, 3, 4, name="a"), _leaf(rng, 3, 4, name="b")
    row = _leaf(rng, 4, name="row")
    w = np.abs(rng.normal(size=(3, 4))) + 0.5
    record("add_broadcast", lambda: ((a + row) * Tensor(w)).sum(), [a, row])
    record("sub", lambda: ((a - b) * Tensor(w)).sum(), [a, b])
    record("mul", lambda: (a * b * row).sum(), [a, b, row])
    pos = Tensor(np.abs(rng.normal(size=(3, 4))) + 0.5, requires_grad=True, name="pos")
    record("div", lambda: (a / pos).sum(), [a, pos])
    record("pow", lambda: (pos ** 3.0).sum(), [pos])
    record("neg", lambda: (-(a * Tensor(w))).sum(), [a])
    m1, m2 = _leaf(rng, 2, 3, 4, name="m1"), _leaf(rng, 4, 5, name="m2")
    record("matmul_batched", lambda: (ad.matmul(m1, m2) * Tensor(rng_fixed(seed, (2, 3, 5)))).sum(), [m1, m2])
    record("exp", lambda: (ad.exp(a) * Tensor(w)).sum(), [a])
    record("log", lambda: (ad.log(pos) * Tensor(w)).sum(), [pos])
    record("tanh", lambda: (ad.tanh(a) * Tensor(w)).sum(), [a])
    record("sigmoid", lambda: (ad.sigmoid(a) * Tensor(w)).sum(), [a])
    record("gelu", lambda: (ad.gelu(a) * Tensor(w)).sum(), [a])
    record("softmax", lambda: (ad.softmax(a, axis=-1) * Tensor(w)).sum(), [a])
    record("log_softmax", lambda: (ad.log_softmax(a, axis=0) * Tensor(w)).sum(), [a])
    record("logsumexp", lambda: (ad.logsumexp(a, axis=-1) * Tensor(w[:, 0])).sum(), [a])
    gamma, beta = _leaf(rng, 4, name="gamma"), _leaf(rng, 4, name="beta")
    record("layer_norm", lambda: (ad.layer_norm(a, gamma, beta, 1e-12) * Tensor(w)).sum(), [a, gamma, beta])
    table = _leaf(rng, 6, 4, name="table")
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    record("embedding_lookup", lambda: (ad.embedding_lookup(table, ids) * Tensor(rng_fixed(seed, (2, 3, 4)))).sum(),
           [table])
    record("getitem", lambda: (a[1:, ::2] * Tensor(w[1:, ::2])).sum() + (a[[0, 0, 2], [1, 1, 3]]).sum(), [a])
    record("reshape_transpose", lambda: (a.reshape(4, 3).T * Tensor(w)).sum(), [a])
    record("mean", lambda: (a * Tensor(w)).mean(axis=0).sum(), [a])
    record("concat", lambda: (ad.concat([a, b], axis=1) * Tensor(rng_fixed(seed, (3, 8)))).sum(), [a, b])
    cond = rng.random((3, 4)) < 0.5
    record("where", lambda: (ad.where(cond, a, b) * Tensor(w)).sum(), [a, b])
    targets = (rng.random((3, 4)) < 0.5).astype(np.float64)
    record("sigmoid_cross_entropy", lambda: ad.sigmoid_cross_entropy(a, targets).sum(), [a])
    drop_rng_seed = int(rng.integers(1 << 30))
    record("dropout", lambda: (ad.dropout(a, 0.3, True, np.random.default_rng(drop_rng_seed)) * Tensor(w)).sum(), [a])

    em = _leaf(rng, 2, 4, 3, name="emissions")
    trans, start, end = _leaf(rng, 3, 3, name="transitions"), _leaf(rng, 3, name="start"), _leaf(rng, 3, name="end")
    tags = np.array([[0, 1, 2, 0], [2, 2, 0, 0]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    record("crf_nll", lambda: crf_negative_log_likelihood(em, tags, trans, start, end, mask),
           [em, trans, start, end])
    return errors


def rng_fixed(seed: int, shape) -> np.ndarray:
    """A weight array that is the same on every call, so ``fn()`` stays deterministic."""
    return np.random.default_rng([seed, *shape]).normal(size=shape)


def tiny_config(use_crf: bool = False, **overrides) -> ModelConfig:
    base = dict(vocab_size=24, num_intents=3, num_user_acts=4, num_slot_tags=5, num_system_acts=3,
                num_layers=2, hidden_size=8, ff_size=16, num_heads=2, max_sequence_length=16,
                dropout_p=0.0, use_crf=use_crf)
    base.update(overrides)
    return ModelConfig(**base)


def random_inputs(config: ModelConfig, rng: np.random.Generator, lengths=(9, 6)) -> list[ModelInput]:
    """Labeled inputs with a history region, a query region and random targets."""
    inputs = []
    for n in lengths:
        query_start = max(2, n // 2)
        tokens = [2] + [int(t) for t in rng.integers(6, config.vocab_size, size=n - 1)]
        segments = [0] * query_start + [1] * (n - query_start)
        speakers = [2] + [int(s) for s in rng.integers(0, 2, size=n - 1)]
        starts = tuple(range(query_start, n - 1))
        k = len(starts)
        intent = int(rng.integers(config.num_intents))
        nhot = [0] * config.num_intents
        nhot[intent] = 1
        inputs.append(ModelInput(
            token_ids=tuple(tokens),
            position_ids=tuple(range(n)),
            segment_ids=tuple(segments),
            speaker_ids=tuple(speakers),
            system_act_nhot=tuple(int(v) for v in rng.integers(0, 2, size=config.num_system_acts)),
            word_starts=starts,
            attention_mask=(1,) * n,
            intent=intent,
            intent_nhot=tuple(nhot),
            user_acts=tuple(int(v) for v in rng.integers(0, 2, size=config.num_user_acts)),
            tags=tuple(int(t) for t in rng.integers(0, config.num_slot_tags, size=k)),
            query_start=query_start,
        ))
    return inputs


def model_checks(use_crf: bool = False, seed: int = 0, ic_mode: str = "softmax") -> dict[str, float]:
    """Joint loss through the whole network, one entry per parameter tensor."""
    config = tiny_config(use_crf)
    rng = substream(seed, "gradcheck.model")
    params = init_parameters(config, rng, dtype=np.float64)
    # larger weights than the training init so gradients are not vanishingly small
    for p in params.values():
        if p.name.endswith(("weight", "query", "key", "value", "output", "w1", "w2")) or p.name.startswith(
                ("embeddings.", "crf.")):
            p.data[...] = rng.normal(0.0, 0.5, size=p.shape)
    batch = collate(random_inputs(config, rng))

    def loss():
        return joint_loss(forward(batch, params, config), batch, params, config, ic_mode=ic_mode)

    return gradient_check(loss, params.values())


def pretrain_checks(seed: int = 0) -> dict[str, float]:
    """MLM (tied output projection) plus NSP loss through the encoder."""
    config = tiny_config()
    rng = substream(seed, "gradcheck.pretrain")
    params = init_parameters(config, rng, dtype=np.float64, pretraining=True)
    for p in params.values():
        if p.ndim == 2:
            p.data[...] = rng.normal(0.0, 0.5, size=p.shape)
    inputs = random_inputs(config, rng)
    batch = collate(inputs)
    rows, cols = [0, 0, 1], [2, 4, 3]
    labels = [7, 11, 20]

    def loss():
        hidden = encode(embed_input(batch, params, config), params, config, batch.attention_mask)
        return pretrain_loss(hidden, params, config, rows, cols, labels, [True, False])

    return gradient_check(loss, params.values())


def run_suite(seed: int = 0) -> dict[str, dict[str, float]]:
    return {
        "operations": operation_checks(seed),
        "joint_loss": model_checks(False, seed),
        "joint_loss_crf": model_checks(True, seed),
        "joint_loss_sigmoid_intent": model_checks(False, seed, ic_mode="sigmoid"),
        "pretrain_loss": pretrain_checks(seed),
    }
