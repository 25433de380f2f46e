"""Four-stage transfer learning: pretraining, unsupervised and supervised
adaptive training, and target fine-tuning.

A stage is described by a :class:`StageSpec`; :func:`run_stage` trains a
copy of the given parameters with shuffled mini-batch Adam and appends the
stage digest to the model's :class:`ModelLineage`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ContractError, Tensor, adam_step
from .data import SPEAKER_SPECIAL, SPEAKER_USER, USER, Corpus, ModelInput
from .metrics import build_report, user_act_f1
from .model import (
    ModelConfig,
    ModelParameters,
    collate,
    encode,
    embed_input,
    forward,
    frames_from_predictions,
    init_embeddings_and_encoder,
    init_heads,
    init_pretraining_heads,
    joint_loss,
    predict_raw,
    threshold_acts,
)
from .seeding import substream
from .tokenizer import Vocab, encode_utterance

log = logging.getLogger(__name__)

THRESHOLD_GRID = (0.3, 0.4, 0.5)


class Stage(str, enum.Enum):
    PRETRAIN = "PRETRAIN"
    UNSUP_ADAPT = "UNSUP_ADAPT"
    SUP_ADAPT = "SUP_ADAPT"
    FINETUNE = "FINETUNE"


class ICMode(str, enum.Enum):
    SOFTMAX = "SOFTMAX"
    SIGMOID = "SIGMOID"


class LineageTag(str, enum.Enum):
    THETA_A = "THETA_A"
    THETA_B = "THETA_B"
    THETA_C = "THETA_C"
    FINAL = "FINAL"


STAGE_LOSSES = {
    Stage.PRETRAIN: frozenset({"mlm", "nsp"}),
    Stage.UNSUP_ADAPT: frozenset({"mlm", "nsp"}),
    Stage.SUP_ADAPT: frozenset({"ic", "sf"}),
    Stage.FINETUNE: frozenset({"ic", "sf", "uac"}),
}

DEFAULT_LEARNING_RATES = {
    Stage.PRETRAIN: 1e-4,
    Stage.UNSUP_ADAPT: 2e-5,
    Stage.SUP_ADAPT: 5e-5,
    Stage.FINETUNE: 5e-5,
}

STAGE_RESULT = {
    Stage.PRETRAIN: LineageTag.THETA_A,
    Stage.UNSUP_ADAPT: LineageTag.THETA_B,
    Stage.SUP_ADAPT: LineageTag.THETA_C,
    Stage.FINETUNE: LineageTag.FINAL,
}

LEGAL_TRANSITIONS = {
    (None, LineageTag.THETA_A),
    (LineageTag.THETA_A, LineageTag.THETA_B),
    (LineageTag.THETA_B, LineageTag.THETA_C),
    (LineageTag.THETA_C, LineageTag.FINAL),
    (LineageTag.THETA_A, LineageTag.THETA_C),
    (LineageTag.THETA_A, LineageTag.FINAL),
    (LineageTag.THETA_B, LineageTag.FINAL),
    (None, LineageTag.FINAL),
}


class LineageError(ValueError):
    pass


@dataclass(frozen=True)
class StageSpec:
    stage: Stage
    epochs: int = 1
    batch_size: int = 32
    learning_rate: float | None = None
    seed: int = 0
    corpus: str = ""
    losses: frozenset | None = None
    ic_mode: ICMode = ICMode.SOFTMAX
    # sort-within-pool batching; keeps the batch order random but cuts padding
    bucket_by_length: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "ic_mode", ICMode(self.ic_mode))
        expected = STAGE_LOSSES[self.stage]
        if self.losses is None:
            object.__setattr__(self, "losses", expected)
        else:
            losses = frozenset(self.losses)
            if losses != expected:
                raise ValueError(f"{self.stage.value} uses losses {sorted(expected)}, got {sorted(losses)}")
            object.__setattr__(self, "losses", losses)
        if self.learning_rate is None:
            object.__setattr__(self, "learning_rate", DEFAULT_LEARNING_RATES[self.stage])
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "corpus": self.corpus,
            "losses": sorted(self.losses),
            "ic_mode": self.ic_mode.value,
            "bucket_by_length": self.bucket_by_length,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "StageSpec":
        raw = dict(raw)
        if "losses" in raw and raw["losses"] is not None:
            raw["losses"] = frozenset(raw["losses"])
        return cls(**raw)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_stage_spec(path) -> StageSpec:
    return StageSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ModelLineage:
    tag: LineageTag | None = None
    parent: LineageTag | None = None
    history: tuple[str, ...] = ()

    def advance(self, spec: StageSpec) -> "ModelLineage":
        new = STAGE_RESULT[spec.stage]
        if (self.tag, new) not in LEGAL_TRANSITIONS:
            have = self.tag.value if self.tag else "untrained"
            raise LineageError(f"cannot run {spec.stage.value} on a {have} model")
        return ModelLineage(new, self.tag, self.history + (spec.digest(),))

    def to_dict(self) -> dict:
        return {
            "tag": self.tag.value if self.tag else None,
            "parent": self.parent.value if self.parent else None,
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelLineage":
        tag = LineageTag(raw["tag"]) if raw.get("tag") else None
        parent = LineageTag(raw["parent"]) if raw.get("parent") else None
        return cls(tag, parent, tuple(raw.get("history", ())))


# ---------------------------------------------------------------------------
# Masked LM and next-sentence prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskingConfig:
    mask_probability: float = 0.15
    mask_token_fraction: float = 0.8
    random_token_fraction: float = 0.1
    keep_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.mask_probability < 1.0:
            raise ValueError("mask_probability must lie in (0, 1)")
        total = self.mask_token_fraction + self.random_token_fraction + self.keep_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mask/random/keep fractions must sum to 1, got {total}")


def make_mlm_example(token_ids: Sequence[int], masking: MaskingConfig, rng: np.random.Generator,
                     vocab: Vocab):
    """Corrupt a token sequence for masked-LM training.

    Returns ``(corrupted_ids, positions, original_ids_at_positions)``. Special
    tokens are never selected.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    special = np.isin(ids, list(vocab.special_ids))
    selected = (rng.random(ids.shape) < masking.mask_probability) & ~special
    positions = np.flatnonzero(selected)
    originals = ids[positions].copy()
    corrupted = ids.copy()
    choice = rng.random(positions.shape)
    n_special = len(vocab.special_ids)
    randoms = rng.integers(n_special, len(vocab), size=positions.shape)
    to_mask = choice < masking.mask_token_fraction
    to_random = (choice >= masking.mask_token_fraction) & (
        choice < masking.mask_token_fraction + masking.random_token_fraction)
    corrupted[positions[to_mask]] = vocab.mask_id
    corrupted[positions[to_random]] = randoms[to_random]
    return corrupted, positions, originals


@dataclass(frozen=True)
class SentencePair:
    """An NSP example before masking. Speaker ids are per segment."""

    a: tuple[int, ...]
    b: tuple[int, ...]
    is_next: bool
    speaker_a: int = SPEAKER_USER
    speaker_b: int = SPEAKER_USER


class PairError(ValueError):
    pass


def _units_from_corpus(corpus) -> list[list[tuple[str, int]]]:
    """Sequences of (text, speaker) units: dialogue turns or document sentences."""
    if isinstance(corpus, Corpus):
        return [[(t.utterance, SPEAKER_USER if t.speaker == USER else 1) for t in d.turns]
                for d in corpus.dialogues]
    return [[(s, SPEAKER_USER) for s in doc] for doc in corpus]


def make_nsp_pairs(corpus, rng: np.random.Generator, vocab: Vocab, max_length: int = 128) -> list[SentencePair]:
    """One pair per adjacent unit; half keep the true successor, half draw a
    random unit from a different dialogue/document.

    ``corpus`` is a :class:`Corpus` (units are turns) or a list of
    documents, each a list of sentences.
    """
    groups = _units_from_corpus(corpus)
    groups = [[(encode_utterance(text, vocab).ids, spk) for text, spk in g] for g in groups]
    groups = [[u for u in g if u[0]] for g in groups]
    if sum(1 for g in groups if g) < 2:
        raise PairError("need at least two nonempty dialogues/documents to draw negative pairs")
    if not any(len(g) >= 2 for g in groups):
        raise PairError("no dialogue/document has two consecutive units")
    budget = max_length - 3
    pairs = []
    for gi, g in enumerate(groups):
        for i in range(len(g) - 1):
            a_ids, a_spk = g[i]
            if rng.random() < 0.5:
                b_ids, b_spk = g[i + 1]
                is_next = True
            else:
                other = int(rng.integers(len(groups) - 1))
                other += other >= gi
                while not groups[other]:
                    other = int(rng.integers(len(groups)))
                    if other == gi:
                        other = (gi + 1) % len(groups)
                b_ids, b_spk = groups[other][int(rng.integers(len(groups[other])))]
                is_next = False
            a_ids, b_ids = list(a_ids), list(b_ids)
            while len(a_ids) + len(b_ids) > budget:
                if len(a_ids) >= len(b_ids):
                    a_ids.pop(0)
                else:
                    b_ids.pop()
            pairs.append(SentencePair(tuple(a_ids), tuple(b_ids), is_next, a_spk, b_spk))
    return pairs


@dataclass(frozen=True)
class PretrainExample:
    model_input: ModelInput
    mlm_positions: tuple[int, ...]
    mlm_labels: tuple[int, ...]
    is_next: bool


def render_pair(pair: SentencePair, vocab: Vocab, num_system_acts: int, masking: MaskingConfig | None,
                rng: np.random.Generator | None) -> PretrainExample:
    """``[CLS] A [SEP] B [SEP]`` with segment ids 0/1, optionally masked."""
    tokens = [vocab.cls_id, *pair.a, vocab.sep_id, *pair.b, vocab.sep_id]
    segments = [0] * (len(pair.a) + 2) + [1] * (len(pair.b) + 1)
    speakers = ([SPEAKER_SPECIAL] + [pair.speaker_a] * len(pair.a) + [SPEAKER_SPECIAL]
                + [pair.speaker_b] * len(pair.b) + [SPEAKER_SPECIAL])
    positions: tuple[int, ...] = ()
    labels: tuple[int, ...] = ()
    if masking is not None:
        corrupted, pos, orig = make_mlm_example(tokens, masking, rng, vocab)
        tokens = corrupted.tolist()
        positions, labels = tuple(int(p) for p in pos), tuple(int(o) for o in orig)
    n = len(tokens)
    inp = ModelInput(
        token_ids=tuple(tokens),
        position_ids=tuple(range(n)),
        segment_ids=tuple(segments),
        speaker_ids=tuple(speakers),
        system_act_nhot=(0,) * num_system_acts,
        word_starts=(),
        attention_mask=(1,) * n,
        query_start=len(pair.a) + 2,
    )
    return PretrainExample(inp, positions, labels, pair.is_next)


def mlm_logits(hidden_at_masked: Tensor, params: ModelParameters, config: ModelConfig) -> Tensor:
    h = ad.gelu(ad.matmul(hidden_at_masked, params["pretrain.mlm.transform.weight"])
                + params["pretrain.mlm.transform.bias"])
    h = ad.layer_norm(h, params["pretrain.mlm.norm.gamma"], params["pretrain.mlm.norm.beta"],
                      config.layer_norm_eps)
    return ad.matmul(h, params["embeddings.token"].T) + params["pretrain.mlm.bias"]


def nsp_logit(h_cls: Tensor, params: ModelParameters) -> Tensor:
    pooled = ad.tanh(ad.matmul(h_cls, params["pretrain.nsp.pool.weight"]) + params["pretrain.nsp.pool.bias"])
    return (ad.matmul(pooled, params["pretrain.nsp.out.weight"]) + params["pretrain.nsp.out.bias"]).reshape(-1)


def pretrain_loss(hidden: Tensor, params: ModelParameters, config: ModelConfig, mlm_rows, mlm_cols,
                  mlm_labels, is_next, batch_size: int | None = None) -> Tensor:
    """Masked-LM cross-entropy plus NSP binary cross-entropy, averaged per example.

    ``mlm_rows``/``mlm_cols`` index the masked positions inside ``hidden``
    (``B x T x H``); ``is_next`` may be ``None`` to drop the NSP term.
    """
    B = batch_size or hidden.shape[0]
    total = Tensor(np.zeros((), dtype=hidden.dtype))
    mlm_rows = np.asarray(mlm_rows, dtype=np.int64)
    if mlm_rows.size:
        picked = hidden[mlm_rows, np.asarray(mlm_cols, dtype=np.int64)]
        logits = mlm_logits(picked, params, config)
        logp = ad.log_softmax(logits, axis=-1)
        onehot = np.zeros(logits.shape, dtype=logits.dtype)
        onehot[np.arange(len(mlm_rows)), np.asarray(mlm_labels, dtype=np.int64)] = 1.0
        total = total - (logp * Tensor(onehot)).sum()
    if is_next is not None:
        logit = nsp_logit(hidden[:, 0, :], params)
        total = total + ad.sigmoid_cross_entropy(logit, np.asarray(is_next, dtype=hidden.dtype)).sum()
    return total * (1.0 / B)


def _pretrain_batch_loss(examples: Sequence[PretrainExample], params, config, training, rng):
    batch = collate([e.model_input for e in examples])
    hidden = encode(embed_input(batch, params, config, training, rng), params, config,
                    batch.attention_mask, training, rng)
    rows = [b for b, e in enumerate(examples) for _ in e.mlm_positions]
    cols = [p for e in examples for p in e.mlm_positions]
    labels = [l for e in examples for l in e.mlm_labels]
    return pretrain_loss(hidden, params, config, rows, cols, labels, [e.is_next for e in examples])


# ---------------------------------------------------------------------------
# Supervised losses and weight transfer
# ---------------------------------------------------------------------------


def supervised_adaptive_loss(outputs, batch, params: ModelParameters, config: ModelConfig,
                             ic_mode: ICMode = ICMode.SOFTMAX) -> Tensor:
    """Intent + slot loss; intent uses sigmoid cross-entropy in ``SIGMOID`` mode."""
    ic_mode = ICMode(ic_mode)
    if batch.intent_nhot is not None and ic_mode is ICMode.SOFTMAX and (batch.intent_nhot.sum(axis=1) > 1).any():
        raise ContractError("multi-intent targets need ic_mode=SIGMOID")
    return joint_loss(outputs, batch, params, config, heads=("ic", "sf"), ic_mode=ic_mode.value.lower())


class ArchitectureMismatch(ValueError):
    pass


_SHARED_DIMS = ("hidden_size", "num_layers", "num_heads", "ff_size", "vocab_size", "max_sequence_length",
                "num_segments", "num_speakers")


def transfer_weights(source: ModelParameters, source_config: ModelConfig, target_config: ModelConfig,
                     rng: np.random.Generator) -> ModelParameters:
    """Copy embedding and encoder weights; freshly initialise all heads.

    The system-act table is copied when its shape matches and re-initialised
    otherwise (source and target corpora may define different act inventories).
    """
    diffs = [f"{d}: {getattr(source_config, d)} != {getattr(target_config, d)}"
             for d in _SHARED_DIMS if getattr(source_config, d) != getattr(target_config, d)]
    if diffs:
        raise ArchitectureMismatch("cannot transfer weights; " + "; ".join(diffs))
    dtype = source.dtype
    fresh = ModelParameters()
    init_embeddings_and_encoder(fresh, target_config, rng, dtype)
    out = ModelParameters()
    for name, t in fresh.items():
        src = source.tensors.get(name)
        if src is not None and src.shape == t.shape:
            out[name] = Tensor(src.data.copy(), requires_grad=True)
        else:
            out[name] = t
    init_heads(out, target_config, rng, dtype)
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _length_of(example) -> int:
    inp = example.model_input if isinstance(example, PretrainExample) else example
    return len(inp)


def make_batches(examples: Sequence, batch_size: int, rng: np.random.Generator,
                 bucket_by_length: bool = True) -> list[list[int]]:
    """Shuffled batches of example indices; the last partial batch is kept.

    With bucketing, indices are sorted by length inside pools of 16 batches
    before slicing, then the batch order is shuffled again.
    """
    order = rng.permutation(len(examples))
    if not bucket_by_length:
        return [order[i : i + batch_size].tolist() for i in range(0, len(order), batch_size)]
    pool = batch_size * 16
    batches = []
    for lo in range(0, len(order), pool):
        chunk = sorted(order[lo : lo + pool].tolist(), key=lambda i: _length_of(examples[i]))
        batches += [chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


@dataclass
class StageData:
    """What a stage trains on.

    For PRETRAIN/UNSUP_ADAPT, ``pairs`` holds unmasked sentence pairs (masks
    are redrawn each epoch). For SUP_ADAPT/FINETUNE, ``inputs`` holds labeled
    :class:`ModelInput` examples.
    """

    inputs: list[ModelInput] = field(default_factory=list)
    pairs: list[SentencePair] = field(default_factory=list)
    vocab: Vocab | None = None
    masking: MaskingConfig = field(default_factory=MaskingConfig)


@dataclass
class Validation:
    inputs: list[ModelInput]
    gold: list
    labels: object
    include_acts: bool = True


def run_stage(params: ModelParameters, lineage: ModelLineage, spec: StageSpec, config: ModelConfig,
              data: StageData, validation: Validation | None = None, heads=None):
    """Train a copy of ``params`` for ``spec.epochs`` epochs.

    Returns ``(params, lineage, history)`` where ``history`` has one dict per
    epoch with the mean training loss and, when ``validation`` is given,
    validation metrics. Deterministic for a fixed ``spec.seed``.
    """
    new_lineage = lineage.advance(spec)
    pretraining = spec.stage in (Stage.PRETRAIN, Stage.UNSUP_ADAPT)
    if pretraining and not data.pairs:
        raise ValueError(f"{spec.stage.value} needs a nonempty set of sentence pairs")
    if not pretraining and not data.inputs:
        raise ValueError(f"{spec.stage.value} needs a nonempty set of labeled inputs")

    params = params.copy()
    if pretraining and "pretrain.nsp.out.weight" not in params:
        init_pretraining_heads(params, config, substream(spec.seed, "init.pretrain"))
    if heads is None:
        heads = tuple(sorted(spec.losses)) if not pretraining else ()

    trainable = params.values() if pretraining else [p for n, p in params.items() if not n.startswith("pretrain.")]
    state = AdamState(learning_rate=spec.learning_rate)
    shuffle_rng = substream(spec.seed, "shuffle")
    dropout_rng = substream(spec.seed, "dropout")
    mask_rng = substream(spec.seed, "masking")
    history = []
    for epoch in range(spec.epochs):
        if pretraining:
            examples = [render_pair(p, data.vocab, config.num_system_acts, data.masking, mask_rng)
                        for p in data.pairs]
        else:
            examples = data.inputs
        total, count = 0.0, 0
        for idx in make_batches(examples, spec.batch_size, shuffle_rng, spec.bucket_by_length):
            chunk = [examples[i] for i in idx]
            if pretraining:
                loss = _pretrain_batch_loss(chunk, params, config, True, dropout_rng)
            else:
                batch = collate(chunk)
                out = forward(batch, params, config, training=True, rng=dropout_rng, heads=heads)
                if spec.stage is Stage.SUP_ADAPT:
                    loss = supervised_adaptive_loss(out, batch, params, config, spec.ic_mode)
                else:
                    loss = joint_loss(out, batch, params, config, heads=heads)
            loss.backward()
            adam_step(trainable, state)
            total += loss.item() * len(chunk)
            count += len(chunk)
        record = {"epoch": epoch + 1, "train_loss": total / max(count, 1)}
        if validation is not None:
            report = evaluate(params, config, validation)
            record["validation"] = {"frame_accuracy": report.frame_accuracy,
                                    "intent_accuracy": report.intent_accuracy,
                                    "slot_f1": report.slot_f1, "user_act_f1": report.user_act_f1}
        log.info("%s epoch %d: %s", spec.stage.value, epoch + 1, record)
        history.append(record)
    for p in params.values():
        p.zero_grad()
    return params, new_lineage, history


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def evaluate(params: ModelParameters, config: ModelConfig, validation: Validation, t_u: float = 0.5):
    preds = predict_raw(validation.inputs, params, config)
    frames = frames_from_predictions(preds, validation.labels, t_u)
    return build_report(frames, validation.gold, validation.include_acts)


def select_threshold(f1_by_threshold: dict[float, float]) -> float:
    """Best threshold by F1; ties go to the largest threshold."""
    return max(f1_by_threshold, key=lambda t: (f1_by_threshold[t], t))


def tune_threshold(params: ModelParameters, config: ModelConfig, validation: Validation,
                   grid=THRESHOLD_GRID) -> float:
    """Pick t_u from ``grid`` maximising validation user-act F1."""
    if config.num_user_acts == 0 or "heads.user_act.out.weight" not in params:
        raise ContractError("model has no user-act head")
    golds = [g.user_acts for g in validation.gold]
    if not any(golds):
        raise ValueError("validation corpus carries no user-act labels")
    probs = predict_raw(validation.inputs, params, config).act_probs
    scores = {}
    for t in grid:
        pred_sets = [frozenset(validation.labels.user_acts[k] for k in ks)
                     for ks in threshold_acts(probs, t)]
        scores[t] = user_act_f1(pred_sets, golds)[2]
    return select_threshold(scores)
