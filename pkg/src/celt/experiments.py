"""Desk-scale experiment harnesses on the synthetic corpus.

Each harness trains small models for several seeds and returns plain dicts
that serialize straight to JSON. The settings dataclasses hold the defaults
used by the acceptance tests.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Corpus, Encoder, split_corpus
from .metrics import build_report
from .model import ModelConfig, ModelParameters, Predictions, frames_from_predictions, init_parameters, predict_raw
from .seeding import substream
from .synthetic import corpus_text, count_context_ambiguous, generate_synthetic_corpus, generate_text_corpus
from .tokenizer import Vocab, build_vocab
from .training import (
    ModelLineage,
    Stage,
    StageData,
    StageSpec,
    make_nsp_pairs,
    run_stage,
    transfer_weights,
)

log = logging.getLogger(__name__)


@dataclass
class SyntheticSetup:
    corpus: Corpus
    vocab: Vocab
    train: Corpus
    validation: Corpus
    test: Corpus
    documents: list[list[str]]

    @property
    def ambiguous_fraction(self) -> float:
        return count_context_ambiguous(self.corpus) / len(self.corpus.user_turns())


def prepare_synthetic(seed: int = 0, num_dialogues: int = 500, vocab_size: int = 800,
                      num_documents: int = 300, fractions=(0.8, 0.1, 0.1)) -> SyntheticSetup:
    """Generate dialogues and pretraining text, learn a vocabulary, split."""
    corpus = generate_synthetic_corpus(seed, num_dialogues)
    documents = generate_text_corpus(seed, num_documents)
    text = corpus_text(corpus) + "\n" + "\n".join(" ".join(doc) for doc in documents)
    vocab = build_vocab(text, vocab_size)
    train, validation, test = split_corpus(corpus, fractions, seed)
    return SyntheticSetup(corpus, vocab, train, validation, test, documents)


@dataclass(frozen=True)
class FinetuneSettings:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 32
    num_layers: int = 2
    hidden_size: int = 64
    ff_size: int = 256
    num_heads: int = 4


@dataclass(frozen=True)
class PretrainSettings:
    pretrain_epochs: int = 20
    unsup_epochs: int = 30
    sup_epochs: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 32


def model_config(setup: SyntheticSetup, settings: FinetuneSettings, **overrides) -> ModelConfig:
    return ModelConfig.for_corpus(
        setup.corpus, len(setup.vocab), num_layers=settings.num_layers, hidden_size=settings.hidden_size,
        ff_size=settings.ff_size, num_heads=settings.num_heads, **overrides)


def gold_frames(corpus: Corpus) -> list:
    return [d.turns[i].labels for d, i in corpus.labeled_user_turns()]


def evaluate_corpus(params: ModelParameters, config: ModelConfig, vocab: Vocab, corpus: Corpus,
                    labels: Corpus, t_u: float = 0.5):
    inputs = Encoder(vocab, labels).build_all(config, corpus.labeled_user_turns())
    frames = frames_from_predictions(predict_raw(inputs, params, config), labels, t_u)
    return build_report(frames, gold_frames(corpus), labels.annotates_user_acts)


def finetune(params: ModelParameters, lineage: ModelLineage, config: ModelConfig, vocab: Vocab,
             train: Corpus, labels: Corpus, seed: int, settings: FinetuneSettings, heads=None):
    inputs = Encoder(vocab, labels).build_all(config, train.labeled_user_turns())
    spec = StageSpec(Stage.FINETUNE, epochs=settings.epochs, batch_size=settings.batch_size,
                     learning_rate=settings.learning_rate, seed=seed)
    params, lineage, _ = run_stage(params, lineage, spec, config, StageData(inputs=inputs), heads=heads)
    return params, lineage


def pretrain_pipeline(config: ModelConfig, vocab: Vocab, documents, unlabeled: Corpus, seed: int,
                      settings: PretrainSettings, supervised: Corpus | None = None,
                      labels: Corpus | None = None):
    """PRETRAIN on text, UNSUP_ADAPT on unlabeled dialogues, optional SUP_ADAPT.

    Returns ``(params, lineage)`` ready for :func:`transfer_weights`.
    """
    params = init_parameters(config, substream(seed, "init"))
    lineage = ModelLineage()
    pairs = make_nsp_pairs(documents, substream(seed, "nsp.text"), vocab, config.max_sequence_length)
    spec = StageSpec(Stage.PRETRAIN, epochs=settings.pretrain_epochs, batch_size=settings.batch_size,
                     learning_rate=settings.learning_rate, seed=seed)
    params, lineage, _ = run_stage(params, lineage, spec, config, StageData(pairs=pairs, vocab=vocab))
    if settings.unsup_epochs > 0:
        pairs = make_nsp_pairs(unlabeled, substream(seed, "nsp.dialogue"), vocab, config.max_sequence_length)
        spec = StageSpec(Stage.UNSUP_ADAPT, epochs=settings.unsup_epochs, batch_size=settings.batch_size,
                         learning_rate=settings.learning_rate, seed=seed)
        params, lineage, _ = run_stage(params, lineage, spec, config, StageData(pairs=pairs, vocab=vocab))
    if settings.sup_epochs > 0 and supervised is not None:
        inputs = Encoder(vocab, labels or supervised).build_all(config, supervised.labeled_user_turns())
        spec = StageSpec(Stage.SUP_ADAPT, epochs=settings.sup_epochs, batch_size=settings.batch_size,
                         learning_rate=settings.learning_rate, seed=seed)
        params, lineage, _ = run_stage(params, lineage, spec, config, StageData(inputs=inputs))
    return params, lineage


def _summary(per_seed: list[dict], keys: Sequence[str]) -> dict:
    return {k: float(np.mean([row[k] for row in per_seed])) for k in keys}


def run_context_ablation(setup: SyntheticSetup, seeds: Sequence[int] = (0, 1, 2),
                         settings: FinetuneSettings = FinetuneSettings(), keep_models: bool = False) -> dict:
    """Full model versus a model that sees neither history turns nor system acts.

    With ``keep_models`` the result also carries the fine-tuned full models
    under ``"models"`` (seed to parameters); that entry is not JSON-ready.
    """
    start = time.perf_counter()
    rows = []
    models = {}
    for seed in seeds:
        row = {"seed": seed}
        for name, ctx in (("full", True), ("no_context", False)):
            config = model_config(setup, settings, enable_context=ctx, enable_system_act_embeddings=ctx)
            params = init_parameters(config, substream(seed, "init"))
            params, _ = finetune(params, ModelLineage(), config, setup.vocab, setup.train, setup.corpus,
                                 seed, settings)
            row[name] = evaluate_corpus(params, config, setup.vocab, setup.test, setup.corpus).frame_accuracy
            if ctx and keep_models:
                models[seed] = params
        log.info("context ablation seed %d: %s", seed, row)
        rows.append(row)
    mean = _summary(rows, ("full", "no_context"))
    result = {"per_seed": rows, "mean": mean, "drop": mean["full"] - mean["no_context"],
              "ambiguous_fraction": setup.ambiguous_fraction, "seconds": time.perf_counter() - start}
    if keep_models:
        result["models"] = models
    return result


def run_transfer_lift(setup: SyntheticSetup, seeds: Sequence[int] = (0, 1, 2), num_labeled: int = 50,
                      settings: FinetuneSettings = FinetuneSettings(epochs=80),
                      pretrain: PretrainSettings = PretrainSettings()) -> dict:
    """Fine-tuning on ``num_labeled`` dialogues from a pretrained and adapted
    encoder versus from random initialization.

    The remaining training dialogues, stripped of labels, feed unsupervised
    adaptation.
    """
    if num_labeled >= len(setup.train.dialogues):
        raise ValueError("num_labeled must leave some training dialogues for unsupervised adaptation")
    start = time.perf_counter()
    labeled = Corpus.from_dialogues(setup.train.dialogues[:num_labeled], like=setup.corpus)
    unlabeled = Corpus.from_dialogues(setup.train.dialogues[num_labeled:], like=setup.corpus).without_labels()
    config = model_config(setup, settings)
    rows = []
    for seed in seeds:
        source, lineage = pretrain_pipeline(config, setup.vocab, setup.documents, unlabeled, seed, pretrain)
        warm = transfer_weights(source, config, config, substream(seed, "init.heads"))
        warm, _ = finetune(warm, lineage, config, setup.vocab, labeled, setup.corpus, seed, settings)
        cold = init_parameters(config, substream(seed, "init"))
        cold, _ = finetune(cold, ModelLineage(), config, setup.vocab, labeled, setup.corpus, seed, settings)
        row = {
            "seed": seed,
            "transfer": evaluate_corpus(warm, config, setup.vocab, setup.test, setup.corpus).frame_accuracy,
            "scratch": evaluate_corpus(cold, config, setup.vocab, setup.test, setup.corpus).frame_accuracy,
        }
        log.info("transfer lift seed %d: %s", seed, row)
        rows.append(row)
    mean = _summary(rows, ("transfer", "scratch"))
    return {"per_seed": rows, "mean": mean, "lift": mean["transfer"] - mean["scratch"],
            "num_labeled": num_labeled, "seconds": time.perf_counter() - start}


def separate_predictions(models: dict[str, ModelParameters], inputs, config: ModelConfig) -> Predictions:
    """Intent from the ``ic`` model, acts from ``uac``, tags from ``sf``."""
    ic = predict_raw(inputs, models["ic"], config)
    sf = predict_raw(inputs, models["sf"], config)
    uac = predict_raw(inputs, models["uac"], config)
    return Predictions(ic.intent_probs, uac.act_probs, sf.tag_ids)


def run_joint_vs_separate(setup: SyntheticSetup, seeds: Sequence[int] = (0, 1, 2),
                          settings: FinetuneSettings = FinetuneSettings(),
                          joint_models: dict[int, ModelParameters] | None = None) -> dict:
    """One jointly trained model against three single-head models whose
    predictions are stitched into frames.

    ``joint_models`` maps seed to an already fine-tuned joint model trained
    with the same settings (for instance the full model of
    :func:`run_context_ablation`), which skips retraining it.
    """
    start = time.perf_counter()
    config = model_config(setup, settings)
    inputs = Encoder(setup.vocab, setup.corpus).build_all(config, setup.test.labeled_user_turns())
    gold = gold_frames(setup.test)
    rows = []
    for seed in seeds:
        base = init_parameters(config, substream(seed, "init"))
        if joint_models and seed in joint_models:
            joint = joint_models[seed]
        else:
            joint, _ = finetune(base, ModelLineage(), config, setup.vocab, setup.train, setup.corpus, seed,
                                settings)
        models = {}
        for head in ("ic", "sf", "uac"):
            models[head], _ = finetune(base, ModelLineage(), config, setup.vocab, setup.train, setup.corpus,
                                       seed, settings, heads=(head,))
        joint_frames = frames_from_predictions(predict_raw(inputs, joint, config), setup.corpus)
        sep_frames = frames_from_predictions(separate_predictions(models, inputs, config), setup.corpus)
        j, s = build_report(joint_frames, gold), build_report(sep_frames, gold)
        row = {"seed": seed, "joint": j.frame_accuracy, "separate": s.frame_accuracy,
               "joint_intent": j.intent_accuracy, "separate_intent": s.intent_accuracy,
               "joint_slot_f1": j.slot_f1, "separate_slot_f1": s.slot_f1,
               "joint_act_f1": j.user_act_f1, "separate_act_f1": s.user_act_f1}
        log.info("joint vs separate seed %d: %s", seed, row)
        rows.append(row)
    mean = _summary(rows, ("joint", "separate", "joint_intent", "separate_intent", "joint_slot_f1",
                           "separate_slot_f1", "joint_act_f1", "separate_act_f1"))
    return {"per_seed": rows, "mean": mean, "margin": mean["joint"] - mean["separate"],
            "seconds": time.perf_counter() - start}


# Cumulative removals in the order of the published ablation table.
ABLATION_ROWS = (
    ("full", {}),
    ("-pretrain", {"pretrain": False}),
    ("-speaker", {"pretrain": False, "enable_speaker_embeddings": False}),
    ("-context", {"pretrain": False, "enable_speaker_embeddings": False, "enable_context": False}),
    ("-system_acts", {"pretrain": False, "enable_speaker_embeddings": False, "enable_context": False,
                      "enable_system_act_embeddings": False}),
)


@dataclass
class AblationRow:
    name: str
    intent_accuracy: float
    user_act_f1: float
    slot_f1: float
    frame_accuracy: float
    per_seed: list = field(default_factory=list)


def run_ablation(setup: SyntheticSetup, seeds: Sequence[int] = (0,),
                 settings: FinetuneSettings = FinetuneSettings(),
                 pretrain: PretrainSettings = PretrainSettings(),
                 rows: Sequence = ABLATION_ROWS) -> list[dict]:
    """Train and score each cumulative ablation variant; one dict per row."""
    table = []
    unlabeled = setup.train.without_labels()
    for name, toggles in rows:
        toggles = dict(toggles)
        use_pretrain = toggles.pop("pretrain", True)
        config = model_config(setup, settings, **toggles)
        reports = []
        for seed in seeds:
            if use_pretrain:
                source, lineage = pretrain_pipeline(config, setup.vocab, setup.documents, unlabeled, seed, pretrain,
                                                    supervised=setup.train, labels=setup.corpus)
                params = transfer_weights(source, config, config, substream(seed, "init.heads"))
            else:
                params, lineage = init_parameters(config, substream(seed, "init")), ModelLineage()
            params, _ = finetune(params, lineage, config, setup.vocab, setup.train, setup.corpus, seed, settings)
            reports.append(evaluate_corpus(params, config, setup.vocab, setup.test, setup.corpus))
        row = AblationRow(
            name,
            float(np.mean([r.intent_accuracy for r in reports])),
            float(np.mean([r.user_act_f1 for r in reports])),
            float(np.mean([r.slot_f1 for r in reports])),
            float(np.mean([r.frame_accuracy for r in reports])),
            [r.frame_accuracy for r in reports],
        )
        log.info("ablation %s: %s", name, row)
        table.append(asdict(row))
    return table
