"""The CELT network: input embeddings, Transformer encoder and SLU heads.

Weights use the row-vector convention ``x @ W + b``. Parameters live in a
flat, ordered name -> :class:`Tensor` mapping (:class:`ModelParameters`)
grouped by prefix: ``embeddings.``, ``encoder.``, ``heads.``, ``crf.`` and
``pretrain.``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import truncnorm

from . import autodiff as ad
from .autodiff import Tensor
from .crf import crf_decode, crf_negative_log_likelihood
from .data import ModelInput, SemanticFrame, bio_decode

NEG_INF = -1e9
HEADS = ("ic", "sf", "uac")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes and ablation switches.

    Defaults are desk scale. ``paper_scale()`` gives the 12/768/3072/12
    encoder.
    """

    vocab_size: int = 100
    num_intents: int = 3
    num_user_acts: int = 0
    num_slot_tags: int = 1
    num_system_acts: int = 0
    num_layers: int = 2
    hidden_size: int = 64
    ff_size: int = 256
    num_heads: int = 4
    max_sequence_length: int = 128
    num_segments: int = 2
    num_speakers: int = 3
    dropout_p: float = 0.1
    use_crf: bool = False
    enable_speaker_embeddings: bool = True
    enable_system_act_embeddings: bool = True
    enable_context: bool = True
    # "all" adds the system-act vector at every position, "query" only on the current query
    system_act_scope: str = "all"
    head_hidden_size: int | None = None
    init_std: float = 0.02
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        for name in ("vocab_size", "num_slot_tags", "hidden_size", "ff_size", "num_heads",
                     "max_sequence_length", "num_segments", "num_speakers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("num_layers", "num_intents", "num_user_acts", "num_system_acts"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.system_act_scope not in ("all", "query"):
            raise ValueError("system_act_scope must be 'all' or 'query'")

    @property
    def head_size(self) -> int:
        return self.head_hidden_size or self.hidden_size

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - fields
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def for_corpus(cls, corpus, vocab_size: int, **overrides) -> "ModelConfig":
        return cls(
            vocab_size=vocab_size,
            num_intents=len(corpus.intents),
            num_user_acts=len(corpus.user_acts),
            num_slot_tags=len(corpus.slot_tags),
            num_system_acts=len(corpus.system_acts),
            **overrides,
        )

    def paper_scale(self) -> "ModelConfig":
        return self.replace(num_layers=12, hidden_size=768, ff_size=3072, num_heads=12)


class ModelParameters:
    """Ordered mapping of parameter name to tensor."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        value.name = name
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()}
        )

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(
            {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.tensors.items()}
        )

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    sample = truncnorm.rvs(-2.0, 2.0, size=shape, random_state=rng)
    return (sample * std).astype(dtype)


def _weight(params, name, rng, shape, std, dtype):
    params[name] = Tensor(_truncated_normal(rng, shape, std, dtype), requires_grad=True)


def _zeros(params, name, shape, dtype):
    params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(params, name, shape, dtype):
    params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_embeddings_and_encoder(params: ModelParameters, config: ModelConfig,
                                rng: np.random.Generator, dtype) -> None:
    H, F, std = config.hidden_size, config.ff_size, config.init_std
    _weight(params, "embeddings.token", rng, (config.vocab_size, H), std, dtype)
    _weight(params, "embeddings.position", rng, (config.max_sequence_length, H), std, dtype)
    _weight(params, "embeddings.segment", rng, (config.num_segments, H), std, dtype)
    _weight(params, "embeddings.speaker", rng, (config.num_speakers, H), std, dtype)
    _weight(params, "embeddings.system_act", rng, (H, config.num_system_acts), std, dtype)
    for layer in range(config.num_layers):
        p = f"encoder.{layer}."
        for proj in ("query", "key", "value", "output"):
            _weight(params, p + f"attention.{proj}", rng, (H, H), std, dtype)
        _ones(params, p + "attention_norm.gamma", (H,), dtype)
        _zeros(params, p + "attention_norm.beta", (H,), dtype)
        _weight(params, p + "ffn.w1", rng, (H, F), std, dtype)
        _zeros(params, p + "ffn.b1", (F,), dtype)
        _weight(params, p + "ffn.w2", rng, (F, H), std, dtype)
        _zeros(params, p + "ffn.b2", (H,), dtype)
        _ones(params, p + "ffn_norm.gamma", (H,), dtype)
        _zeros(params, p + "ffn_norm.beta", (H,), dtype)


def init_heads(params: ModelParameters, config: ModelConfig, rng: np.random.Generator, dtype) -> None:
    H, C, std = config.hidden_size, config.head_size, config.init_std
    sizes = {"intent": config.num_intents, "user_act": config.num_user_acts, "slot": config.num_slot_tags}
    for head, n_out in sizes.items():
        if n_out == 0:
            continue
        _weight(params, f"heads.{head}.ff.weight", rng, (H, C), std, dtype)
        _zeros(params, f"heads.{head}.ff.bias", (C,), dtype)
        _weight(params, f"heads.{head}.out.weight", rng, (C, n_out), std, dtype)
        _zeros(params, f"heads.{head}.out.bias", (n_out,), dtype)
    if config.use_crf:
        L = config.num_slot_tags
        _weight(params, "crf.transitions", rng, (L, L), std, dtype)
        _zeros(params, "crf.start", (L,), dtype)
        _zeros(params, "crf.end", (L,), dtype)


def init_pretraining_heads(params: ModelParameters, config: ModelConfig, rng: np.random.Generator,
                           dtype=None) -> None:
    """Masked-LM transform + output bias (tied to the token table) and the NSP classifier."""
    dtype = dtype or params.dtype
    H, std = config.hidden_size, config.init_std
    _weight(params, "pretrain.mlm.transform.weight", rng, (H, H), std, dtype)
    _zeros(params, "pretrain.mlm.transform.bias", (H,), dtype)
    _ones(params, "pretrain.mlm.norm.gamma", (H,), dtype)
    _zeros(params, "pretrain.mlm.norm.beta", (H,), dtype)
    _zeros(params, "pretrain.mlm.bias", (config.vocab_size,), dtype)
    _weight(params, "pretrain.nsp.pool.weight", rng, (H, H), std, dtype)
    _zeros(params, "pretrain.nsp.pool.bias", (H,), dtype)
    _weight(params, "pretrain.nsp.out.weight", rng, (H, 1), std, dtype)
    _zeros(params, "pretrain.nsp.out.bias", (1,), dtype)


def init_parameters(config: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                    pretraining: bool = False) -> ModelParameters:
    """Truncated-normal (std ``init_std``) weights, zero biases, unit norm gains."""
    params = ModelParameters()
    init_embeddings_and_encoder(params, config, rng, dtype)
    init_heads(params, config, rng, dtype)
    if pretraining:
        init_pretraining_heads(params, config, rng, dtype)
    return params


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    speaker_ids: np.ndarray
    attention_mask: np.ndarray
    query_mask: np.ndarray
    system_act: np.ndarray
    word_starts: np.ndarray
    word_mask: np.ndarray
    intent: np.ndarray | None = None
    intent_nhot: np.ndarray | None = None
    user_acts: np.ndarray | None = None
    tags: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def word_counts(self) -> np.ndarray:
        return self.word_mask.sum(axis=1)


def collate(inputs: Sequence[ModelInput], pad_to: int | None = None) -> Batch:
    """Pad a list of examples to a common length. Padding uses id 0 everywhere."""
    B = len(inputs)
    T = max(len(x) for x in inputs)
    if pad_to is not None:
        T = max(T, pad_to)
    W = max((len(x.word_starts) for x in inputs), default=0)
    A = len(inputs[0].system_act_nhot)
    tok = np.zeros((B, T), dtype=np.int64)
    pos = np.zeros((B, T), dtype=np.int64)
    seg = np.zeros((B, T), dtype=np.int64)
    spk = np.zeros((B, T), dtype=np.int64)
    att = np.zeros((B, T), dtype=bool)
    qmask = np.zeros((B, T), dtype=bool)
    sys_act = np.zeros((B, A))
    starts = np.zeros((B, W), dtype=np.int64)
    wmask = np.zeros((B, W), dtype=bool)
    for b, x in enumerate(inputs):
        n = len(x)
        tok[b, :n] = x.token_ids
        pos[b, :n] = x.position_ids
        seg[b, :n] = x.segment_ids
        spk[b, :n] = x.speaker_ids
        att[b, :n] = np.asarray(x.attention_mask, dtype=bool)
        qmask[b, x.query_start:n] = True
        sys_act[b] = x.system_act_nhot
        k = len(x.word_starts)
        starts[b, :k] = x.word_starts
        wmask[b, :k] = True
    # padded positions point at position 0 so the position table never overflows
    pos[~att] = 0
    batch = Batch(tok, pos, seg, spk, att, qmask, sys_act, starts, wmask)
    if all(x.intent is not None for x in inputs):
        batch.intent = np.array([x.intent for x in inputs], dtype=np.int64)
    if all(x.intent_nhot is not None for x in inputs):
        batch.intent_nhot = np.array([x.intent_nhot for x in inputs], dtype=np.float64)
    if all(x.user_acts is not None for x in inputs):
        batch.user_acts = np.array([x.user_acts for x in inputs], dtype=np.float64).reshape(B, -1)
    if all(x.tags is not None for x in inputs):
        tags = np.zeros((B, W), dtype=np.int64)
        for b, x in enumerate(inputs):
            tags[b, : len(x.tags)] = x.tags
        batch.tags = tags
    return batch


def _as_batch(inputs) -> Batch:
    if isinstance(inputs, Batch):
        return inputs
    if isinstance(inputs, ModelInput):
        return collate([inputs])
    return collate(list(inputs))


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def embed_input(inputs, params: ModelParameters, config: ModelConfig, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Sum of token, position, segment, speaker and system-act embeddings, ``B x T x H``."""
    batch = _as_batch(inputs)
    T = batch.token_ids.shape[1]
    if int(batch.position_ids.max(initial=0)) >= params["embeddings.position"].shape[0]:
        raise ValueError(
            f"sequence of length {T} exceeds position table of {params['embeddings.position'].shape[0]}")
    x = ad.embedding_lookup(params["embeddings.token"], batch.token_ids)
    x = x + ad.embedding_lookup(params["embeddings.position"], batch.position_ids)
    x = x + ad.embedding_lookup(params["embeddings.segment"], batch.segment_ids)
    if config.enable_speaker_embeddings:
        x = x + ad.embedding_lookup(params["embeddings.speaker"], batch.speaker_ids)
    if config.enable_system_act_embeddings and config.num_system_acts > 0:
        table = params["embeddings.system_act"]
        nhot = Tensor(batch.system_act.astype(table.dtype))
        e_a = ad.matmul(nhot, table.T)  # B x H
        e_a = e_a.reshape(batch.size, 1, config.hidden_size)
        if config.system_act_scope == "query":
            e_a = e_a * Tensor(batch.query_mask[..., None].astype(table.dtype))
        x = x + e_a
    return ad.dropout(x, config.dropout_p, training, rng)


def attention_bias(mask: np.ndarray, dtype) -> np.ndarray:
    """Additive key mask ``B x 1 x 1 x T``: 0 for real keys, -1e9 for padding."""
    return np.where(mask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask=None, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k) + bias) V`` over the last two axes.

    ``mask`` is either a boolean key mask (True = attend), broadcastable to
    the score matrix, or ``None``.
    """
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ad.ShapeError(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape} are inconsistent")
    d_k = K.shape[-1]
    scores = ad.matmul(Q, K.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_k))
    if mask is not None:
        bias = np.where(np.asarray(mask, dtype=bool), 0.0, NEG_INF).astype(scores.dtype)
        scores = scores + Tensor(bias)
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, V)
    return (out, weights) if return_weights else out


def multi_head_attention(x: Tensor, params: ModelParameters, layer: int, num_heads: int,
                         mask: np.ndarray | None = None, return_weights: bool = False):
    """Per-head projections, attention, concatenation and output projection.

    ``x`` is ``B x T x H``; ``mask`` is the ``B x T`` key mask.
    """
    p = f"encoder.{layer}.attention."
    B, T, H = x.shape
    d = H // num_heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, T, num_heads, d).transpose(0, 2, 1, 3)

    q = split(ad.matmul(x, params[p + "query"]))
    k = split(ad.matmul(x, params[p + "key"]))
    v = split(ad.matmul(x, params[p + "value"]))
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
    heads, weights = scaled_dot_attention(q, k, v, key_mask, return_weights=True)
    concat = heads.transpose(0, 2, 1, 3).reshape(B, T, H)
    out = ad.matmul(concat, params[p + "output"])
    return (out, weights) if return_weights else out


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise ``GELU(x W1 + b1) W2 + b2``."""
    if x.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != b2.shape[-1]:
        raise ad.ShapeError(f"feed_forward shapes x{x.shape} W1{w1.shape} W2{w2.shape} do not chain")
    return ad.matmul(ad.gelu(ad.matmul(x, w1) + b1), w2) + b2


def encode(embedded: Tensor, params: ModelParameters, config: ModelConfig, mask: np.ndarray | None = None,
           training: bool = False, rng: np.random.Generator | None = None,
           return_attention: bool = False):
    """Post-norm Transformer blocks over ``embedded`` (``B x T x H``)."""
    x = embedded
    attentions = []
    for layer in range(config.num_layers):
        p = f"encoder.{layer}."
        attn, weights = multi_head_attention(x, params, layer, config.num_heads, mask, return_weights=True)
        attentions.append(weights)
        x = ad.layer_norm(x + ad.dropout(attn, config.dropout_p, training, rng),
                          params[p + "attention_norm.gamma"], params[p + "attention_norm.beta"],
                          config.layer_norm_eps)
        ff = feed_forward(x, params[p + "ffn.w1"], params[p + "ffn.b1"], params[p + "ffn.w2"], params[p + "ffn.b2"])
        x = ad.layer_norm(x + ad.dropout(ff, config.dropout_p, training, rng),
                          params[p + "ffn_norm.gamma"], params[p + "ffn_norm.beta"], config.layer_norm_eps)
    return (x, attentions) if return_attention else x


def _head(h: Tensor, params: ModelParameters, name: str, activation) -> Tensor:
    p = f"heads.{name}."
    hidden = activation(ad.matmul(h, params[p + "ff.weight"]) + params[p + "ff.bias"])
    return ad.matmul(hidden, params[p + "out.weight"]) + params[p + "out.bias"]


def intent_logits(h_cls: Tensor, params: ModelParameters) -> Tensor:
    return _head(h_cls, params, "intent", ad.tanh)


def user_act_logits(h_cls: Tensor, params: ModelParameters) -> Tensor:
    return _head(h_cls, params, "user_act", ad.tanh)


def gather_word_states(hidden: Tensor, word_starts: np.ndarray) -> Tensor:
    """Hidden state of each word's first sub-token: ``B x W x H``."""
    word_starts = np.asarray(word_starts, dtype=np.int64)
    if word_starts.ndim == 1:
        word_starts = word_starts[None, :]
    if word_starts.size and (word_starts.min() < 0 or word_starts.max() >= hidden.shape[1]):
        raise IndexError(f"word start outside sequence of length {hidden.shape[1]}")
    rows = np.arange(hidden.shape[0])[:, None]
    return hidden[rows, word_starts]


def slot_logits(word_states: Tensor, params: ModelParameters) -> Tensor:
    return _head(word_states, params, "slot", ad.gelu)


def predict_intent(h_cls: Tensor, params: ModelParameters) -> Tensor:
    """Intent distribution from the [CLS] state."""
    return ad.softmax(intent_logits(h_cls, params), axis=-1)


def predict_user_acts(h_cls: Tensor, params: ModelParameters, t_u: float = 0.5):
    """Per-act sigmoid probabilities and the set of acts with probability > ``t_u``."""
    if not 0.0 < t_u < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t_u}")
    probs = ad.sigmoid(user_act_logits(h_cls, params))
    return probs, threshold_acts(probs.data, t_u)


def threshold_acts(probs: np.ndarray, t_u: float):
    probs = np.asarray(probs)
    if probs.ndim == 1:
        return {int(k) for k in np.flatnonzero(probs > t_u)}
    return [{int(k) for k in np.flatnonzero(row > t_u)} for row in probs]


def predict_slots(hidden: Tensor, word_starts, params: ModelParameters) -> Tensor:
    """Per-word tag distributions from first-sub-token states."""
    return ad.softmax(slot_logits(gather_word_states(hidden, word_starts), params), axis=-1)


@dataclass
class ModelOutputs:
    hidden: Tensor
    intent_logits: Tensor | None
    user_act_logits: Tensor | None
    slot_logits: Tensor | None
    attentions: list | None = None


def forward(inputs, params: ModelParameters, config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None, heads: Iterable[str] = HEADS,
            return_attention: bool = False) -> ModelOutputs:
    batch = _as_batch(inputs)
    heads = set(heads)
    embedded = embed_input(batch, params, config, training, rng)
    hidden, attentions = encode(embedded, params, config, batch.attention_mask, training, rng,
                                return_attention=True)
    h_cls = hidden[:, 0, :]
    il = intent_logits(h_cls, params) if "ic" in heads and "heads.intent.out.weight" in params else None
    al = user_act_logits(h_cls, params) if "uac" in heads and "heads.user_act.out.weight" in params else None
    sl = None
    if "sf" in heads:
        sl = slot_logits(gather_word_states(hidden, batch.word_starts), params)
    return ModelOutputs(hidden, il, al, sl, attentions if return_attention else None)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Sum over rows of ``-log softmax(logits)[target]``; ``weights`` masks rows."""
    logp = ad.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, np.asarray(targets, dtype=np.int64)[..., None], 1.0, axis=-1)
    if weights is not None:
        onehot *= np.asarray(weights, dtype=logits.dtype)[..., None]
    return -(logp * Tensor(onehot)).sum()


def intent_loss(outputs: ModelOutputs, batch: Batch, ic_mode: str = "softmax") -> Tensor:
    if ic_mode == "sigmoid":
        return ad.sigmoid_cross_entropy(outputs.intent_logits, batch.intent_nhot).sum()
    return softmax_cross_entropy(outputs.intent_logits, batch.intent)


def slot_loss(outputs: ModelOutputs, batch: Batch, params: ModelParameters, config: ModelConfig) -> Tensor:
    if config.use_crf:
        return crf_negative_log_likelihood(outputs.slot_logits, batch.tags, params["crf.transitions"],
                                           params["crf.start"], params["crf.end"], batch.word_mask)
    return softmax_cross_entropy(outputs.slot_logits, batch.tags, batch.word_mask)


def user_act_loss(outputs: ModelOutputs, batch: Batch) -> Tensor:
    return ad.sigmoid_cross_entropy(outputs.user_act_logits, batch.user_acts).sum()


class MissingTargetError(ValueError):
    pass


def joint_loss(outputs: ModelOutputs, batch: Batch, params: ModelParameters, config: ModelConfig,
               heads: Iterable[str] = HEADS, ic_mode: str = "softmax") -> Tensor:
    """Batch mean of per-example ``CE(intent) + sum_words CE(slot) + sum_acts BCE(act)``.

    Heads absent from ``heads`` (or with no outputs in the label space)
    contribute nothing. With ``config.use_crf`` the slot term is the CRF
    negative log-likelihood.
    """
    heads = set(heads)
    total = None
    terms = []
    if "ic" in heads and outputs.intent_logits is not None:
        needed = batch.intent_nhot if ic_mode == "sigmoid" else batch.intent
        if needed is None:
            raise MissingTargetError("intent head enabled but batch has no intent targets")
        terms.append(intent_loss(outputs, batch, ic_mode))
    if "sf" in heads and outputs.slot_logits is not None:
        if batch.tags is None:
            raise MissingTargetError("slot head enabled but batch has no tag targets")
        terms.append(slot_loss(outputs, batch, params, config))
    if "uac" in heads and outputs.user_act_logits is not None:
        if batch.user_acts is None:
            raise MissingTargetError("user-act head enabled but batch has no act targets")
        terms.append(user_act_loss(outputs, batch))
    for t in terms:
        total = t if total is None else total + t
    if total is None:
        return Tensor(np.zeros((), dtype=params.dtype))
    return total * (1.0 / batch.size)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass
class Predictions:
    intent_probs: np.ndarray | None
    act_probs: np.ndarray | None
    tag_ids: list[list[int]]


def predict_raw(inputs: Sequence[ModelInput], params: ModelParameters, config: ModelConfig,
                batch_size: int = 64, pad_to: int | None = None) -> Predictions:
    """Batched eval-mode probabilities and decoded tag ids."""
    intent_probs, act_probs, tag_ids = [], [], []
    for lo in range(0, len(inputs), batch_size):
        chunk = list(inputs[lo : lo + batch_size])
        batch = collate(chunk, pad_to=pad_to)
        out = forward(batch, params, config, training=False)
        if out.intent_logits is not None:
            intent_probs.append(ad.softmax(out.intent_logits, axis=-1).data)
        if out.user_act_logits is not None:
            act_probs.append(ad.sigmoid(out.user_act_logits).data)
        logits = out.slot_logits.data
        for b, x in enumerate(chunk):
            n = len(x.word_starts)
            if config.use_crf:
                tag_ids.append(crf_decode(logits[b, :n], params["crf.transitions"],
                                          params["crf.start"], params["crf.end"]))
            else:
                tag_ids.append([int(t) for t in logits[b, :n].argmax(axis=-1)])
    return Predictions(
        np.concatenate(intent_probs) if intent_probs else None,
        np.concatenate(act_probs) if act_probs else None,
        tag_ids,
    )


def frames_from_predictions(preds: Predictions, labels, t_u: float = 0.5) -> list[SemanticFrame]:
    """Turn raw predictions into frames using the label inventories of ``labels``."""
    tags = labels.slot_tags
    frames = []
    for i, tag_ids in enumerate(preds.tag_ids):
        intent = labels.intents[int(preds.intent_probs[i].argmax())] if preds.intent_probs is not None else ""
        acts = frozenset()
        if preds.act_probs is not None:
            acts = frozenset(labels.user_acts[k] for k in threshold_acts(preds.act_probs[i], t_u))
        spans = tuple(bio_decode([tags[t] for t in tag_ids]))
        frames.append(SemanticFrame(intent, acts, spans))
    return frames


def predict_frames(inputs: Sequence[ModelInput], params: ModelParameters, config: ModelConfig, labels,
                   t_u: float = 0.5, batch_size: int = 64) -> list[SemanticFrame]:
    return frames_from_predictions(predict_raw(inputs, params, config, batch_size), labels, t_u)


def predict_frame(inp: ModelInput, params: ModelParameters, config: ModelConfig, labels,
                  t_u: float = 0.5, pad_to: int | None = None) -> SemanticFrame:
    """Full inference for one example: intent argmax, act threshold, slot decode."""
    preds = predict_raw([inp], params, config, pad_to=pad_to)
    return frames_from_predictions(preds, labels, t_u)[0]
