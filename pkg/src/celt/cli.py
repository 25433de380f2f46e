"""Command-line driver for data generation, the four training stages,
evaluation, prediction, ablations and gradient checks.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 I/O error.
Effective settings resolve as command-line flag, then ``--config`` file,
then the built-in default, and are echoed into every artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import ContractError
from .checkpoint import CheckpointError, CheckpointManifest, load_checkpoint, save_checkpoint
from .data import (
    SYSTEM,
    USER,
    Corpus,
    CorpusError,
    Dialogue,
    Encoder,
    SequenceLengthError,
    Turn,
    load_corpus,
    split_corpus,
)
from .experiments import (
    ABLATION_ROWS,
    FinetuneSettings,
    PretrainSettings,
    SyntheticSetup,
    prepare_synthetic,
    run_ablation,
)
from .gradcheck import TOLERANCE, run_suite
from .metrics import build_report
from .model import ModelConfig, ModelParameters, frames_from_predictions, init_parameters, predict_frame, predict_raw
from .seeding import substream
from .synthetic import corpus_text, generate_synthetic_corpus, generate_text_corpus
from .tokenizer import Vocab, VocabError, build_vocab
from .training import (
    LineageError,
    ModelLineage,
    PairError,
    Stage,
    StageData,
    StageSpec,
    Validation,
    make_nsp_pairs,
    run_stage,
    transfer_weights,
    tune_threshold,
)

log = logging.getLogger("celt")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "num_dialogues": 500,
    "num_documents": 300,
    "vocab_size": 800,
    "epochs": None,
    "batch_size": 32,
    "learning_rate": None,
    "num_layers": 2,
    "hidden_size": 64,
    "ff_size": 256,
    "num_heads": 4,
    "max_sequence_length": 128,
    "dropout_p": 0.1,
    "use_crf": False,
    "enable_context": True,
    "enable_speaker_embeddings": True,
    "enable_system_act_embeddings": True,
    "system_act_scope": "all",
    "ic_mode": "SOFTMAX",
    "split": None,
    "split_seed": 0,
    "t_u": None,
    "num_labeled": None,
}

STAGE_EPOCHS = {Stage.PRETRAIN: 20, Stage.UNSUP_ADAPT: 30, Stage.SUP_ADAPT: 10, Stage.FINETUNE: 30}
MODEL_KEYS = ("num_layers", "hidden_size", "ff_size", "num_heads", "max_sequence_length", "dropout_p", "use_crf",
              "enable_context", "enable_speaker_embeddings", "enable_system_act_embeddings", "system_act_scope")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed for every random substream")
    g.add_argument("--config", help="JSON file of settings (overridden by flags)")
    g.add_argument("--checkpoint-in", help="checkpoint directory to start from")
    g.add_argument("--checkpoint-out", help="checkpoint directory to write")
    g.add_argument("--corpus", help="dialogue corpus JSON (or plain text for pretrain)")
    g.add_argument("--out", help="output file")
    g.add_argument("--vocab", help="vocabulary file, one token per line")
    g.add_argument("-v", "--verbose", action="store_true")
    s = common.add_argument_group("settings")
    for key, kind in (("num_dialogues", int), ("num_documents", int), ("vocab_size", int), ("epochs", int),
                      ("batch_size", int), ("learning_rate", float), ("num_layers", int), ("hidden_size", int),
                      ("ff_size", int), ("num_heads", int), ("max_sequence_length", int), ("dropout_p", float),
                      ("use_crf", _bool), ("enable_context", _bool), ("enable_speaker_embeddings", _bool),
                      ("enable_system_act_embeddings", _bool), ("system_act_scope", str), ("ic_mode", str),
                      ("split", str), ("split_seed", int), ("t_u", float), ("num_labeled", int)):
        s.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=argparse.SUPPRESS)

    parser = _Parser(prog="celt", description="Context-aware joint SLU models trained with staged transfer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dialogue corpus").add_argument(
        "--text-out", help="also write a plain-text pretraining corpus here")
    vp = sub.add_parser("build-vocab", parents=[common], help="learn a subword vocabulary")
    vp.add_argument("--text", action="append", default=[], help="extra plain-text file (repeatable)")
    pp = sub.add_parser("pretrain", parents=[common], help="MLM+NSP pretraining on plain text")
    pp.add_argument("--labels", help="corpus whose label inventories size the heads")
    sub.add_parser("adapt-unsup", parents=[common], help="MLM+NSP on dialogue turns")
    sub.add_parser("adapt-sup", parents=[common], help="intent+slot training on a labeled corpus")
    sub.add_parser("finetune", parents=[common], help="joint intent/act/slot fine-tuning")
    sub.add_parser("eval", parents=[common], help="score a checkpoint on a corpus split")
    pr = sub.add_parser("predict", parents=[common], help="predict one semantic frame")
    pr.add_argument("--utterance", required=True)
    pr.add_argument("--history", action="append", default=[],
                    help="earlier turn as 'user: text' or 'system: text' (repeatable, oldest first)")
    sub.add_parser("ablate", parents=[common], help="cumulative ablation table on a synthetic corpus")
    sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: malformed JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        settings.update(raw)
    for key in DEFAULTS:
        if key in vars(args):
            settings[key] = getattr(args, key)
    if settings["split"] is None:
        settings["split"] = "test" if args.command == "eval" else "train"
    if settings["split"] not in ("train", "validation", "test", "all"):
        raise ValidationError("split must be one of train, validation, test, all")
    settings["ic_mode"] = str(settings["ic_mode"]).upper()
    if settings["ic_mode"] not in ("SOFTMAX", "SIGMOID"):
        raise ValidationError("ic_mode must be SOFTMAX or SIGMOID")
    return settings


def _relative(path) -> str | None:
    if path is None:
        return None
    try:
        return os.path.relpath(path)
    except ValueError:
        return Path(path).name


def echo(args, settings: dict) -> dict:
    """Effective settings with artifact paths made relative to the working directory."""
    return {
        "command": args.command,
        "settings": dict(sorted(settings.items())),
        "paths": {k: _relative(getattr(args, k, None)) for k in ("corpus", "vocab", "checkpoint_in",
                                                                   "checkpoint_out", "out", "config")},
    }


def _require(args, *names):
    for name in names:
        if not getattr(args, name, None):
            raise UsageError(f"{args.command} needs --{name.replace('_', '-')}")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _emit(args, payload) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_vocab(args) -> Vocab:
    _require(args, "vocab")
    return Vocab.load(args.vocab)


def _model_config(settings: dict, labels: Corpus | None, vocab: Vocab) -> ModelConfig:
    model = {k: settings[k] for k in MODEL_KEYS}
    if labels is None:
        return ModelConfig(vocab_size=len(vocab), num_intents=1, num_user_acts=0, num_slot_tags=1,
                           num_system_acts=0, **model)
    return ModelConfig.for_corpus(labels, len(vocab), **model)


def _spec(stage: Stage, settings: dict, corpus_ref: str) -> StageSpec:
    epochs = settings["epochs"] if settings["epochs"] is not None else STAGE_EPOCHS[stage]
    return StageSpec(stage, epochs=epochs, batch_size=settings["batch_size"],
                     learning_rate=settings["learning_rate"], seed=settings["seed"],
                     corpus=corpus_ref or "", ic_mode=settings["ic_mode"])


def _labels_dict(corpus: Corpus) -> dict:
    return {"intents": list(corpus.intents), "user_acts": list(corpus.user_acts), "slots": list(corpus.slots),
            "system_acts": list(corpus.system_acts), "annotates_user_acts": corpus.annotates_user_acts}


def _labels_corpus(labels: dict) -> Corpus:
    return Corpus((), tuple(labels["intents"]), tuple(labels["user_acts"]), tuple(labels["slots"]),
                  tuple(labels["system_acts"]), labels.get("annotates_user_acts", True))


def _select_split(corpus: Corpus, settings: dict, name: str | None = None) -> Corpus:
    name = name or settings["split"]
    if name == "all":
        return corpus
    train, validation, test = split_corpus(corpus, seed=settings["split_seed"])
    return {"train": train, "validation": validation, "test": test}[name]


def _save(args, params: ModelParameters, config: ModelConfig, lineage: ModelLineage, vocab: Vocab,
          settings: dict, labels: Corpus | None, history=None, extra=None) -> None:
    _require(args, "checkpoint_out")
    manifest = CheckpointManifest(
        config=config.to_dict(), lineage=lineage.to_dict(), vocab_hash=vocab.content_hash(),
        labels=_labels_dict(labels) if labels is not None else None,
        extra={"effective_config": echo(args, settings), "history": history or [], **(extra or {})})
    save_checkpoint(params.astype(np.float32), manifest, args.checkpoint_out)


def _load(args, vocab: Vocab):
    _require(args, "checkpoint_in")
    params, manifest = load_checkpoint(args.checkpoint_in)
    if manifest.vocab_hash != vocab.content_hash():
        raise ValidationError("vocabulary does not match the one the checkpoint was trained with")
    return params, manifest


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args, settings):
    _require(args, "out")
    corpus = generate_synthetic_corpus(settings["seed"], settings["num_dialogues"])
    corpus.save(args.out)
    if args.text_out:
        docs = generate_text_corpus(settings["seed"], settings["num_documents"])
        Path(args.text_out).write_text("\n\n".join("\n".join(d) for d in docs) + "\n", encoding="utf-8")
    _write_json(str(args.out) + ".config.json", echo(args, settings))


def read_documents(path) -> list[list[str]]:
    """Blank-line separated documents, one sentence per line."""
    docs, current = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            current.append(line.strip())
        elif current:
            docs.append(current)
            current = []
    if current:
        docs.append(current)
    return docs


def cmd_build_vocab(args, settings):
    _require(args, "out")
    if not args.corpus and not args.text:
        raise UsageError("build-vocab needs --corpus and/or --text")
    parts = []
    if args.corpus:
        parts.append(corpus_text(load_corpus(args.corpus)))
    for path in args.text:
        parts.append(Path(path).read_text(encoding="utf-8"))
    vocab = build_vocab("\n".join(parts), settings["vocab_size"])
    vocab.save(args.out)
    _write_json(str(args.out) + ".config.json", echo(args, settings))


def cmd_pretrain(args, settings):
    _require(args, "corpus", "checkpoint_out")
    vocab = _load_vocab(args)
    labels = load_corpus(args.labels) if args.labels else None
    config = _model_config(settings, labels, vocab)
    if args.corpus.endswith(".json"):
        source = load_corpus(args.corpus)
    else:
        source = read_documents(args.corpus)
    spec = _spec(Stage.PRETRAIN, settings, _relative(args.corpus))
    pairs = make_nsp_pairs(source, substream(settings["seed"], "nsp.pretrain"), vocab, config.max_sequence_length)
    params = init_parameters(config, substream(settings["seed"], "init"))
    params, lineage, history = run_stage(params, ModelLineage(), spec, config, StageData(pairs=pairs, vocab=vocab))
    _save(args, params, config, lineage, vocab, settings, labels, history)


def cmd_adapt_unsup(args, settings):
    _require(args, "corpus", "checkpoint_in", "checkpoint_out")
    vocab = _load_vocab(args)
    params, manifest = _load(args, vocab)
    config = manifest.model_config
    corpus = load_corpus(args.corpus).without_labels()
    spec = _spec(Stage.UNSUP_ADAPT, settings, _relative(args.corpus))
    pairs = make_nsp_pairs(corpus, substream(settings["seed"], "nsp.adapt"), vocab, config.max_sequence_length)
    lineage = ModelLineage.from_dict(manifest.lineage)
    params, lineage, history = run_stage(params, lineage, spec, config, StageData(pairs=pairs, vocab=vocab))
    labels = _labels_corpus(manifest.labels) if manifest.labels else None
    _save(args, params, config, lineage, vocab, settings, labels, history)


def _labeled_stage(args, settings, stage: Stage):
    _require(args, "corpus")
    vocab = _load_vocab(args)
    corpus = load_corpus(args.corpus, allow_multi_intent=settings["ic_mode"] == "SIGMOID")
    config = _model_config(settings, corpus, vocab)
    if args.checkpoint_in:
        source, manifest = _load(args, vocab)
        lineage = ModelLineage.from_dict(manifest.lineage)
        params = transfer_weights(source, manifest.model_config, config, substream(settings["seed"], "init.heads"))
    elif stage is Stage.FINETUNE:
        params, lineage = init_parameters(config, substream(settings["seed"], "init")), ModelLineage()
    else:
        raise UsageError("adapt-sup needs --checkpoint-in")
    encoder = Encoder(vocab, corpus)
    split_name = settings["split"]
    train = _select_split(corpus, settings, split_name)
    if settings["num_labeled"] is not None:
        train = Corpus.from_dialogues(train.dialogues[: settings["num_labeled"]], like=corpus)
    inputs = encoder.build_all(config, train.labeled_user_turns())
    validation = None
    if split_name == "train":
        held = _select_split(corpus, settings, "validation")
        validation = Validation(encoder.build_all(config, held.labeled_user_turns()),
                                [d.turns[i].labels for d, i in held.labeled_user_turns()], corpus,
                                corpus.annotates_user_acts)
    spec = _spec(stage, settings, _relative(args.corpus))
    params, lineage, history = run_stage(params, lineage, spec, config, StageData(inputs=inputs), validation)
    extra = {}
    if stage is Stage.FINETUNE:
        t_u = settings["t_u"]
        if t_u is None and validation is not None and config.num_user_acts and any(g.user_acts for g in validation.gold):
            t_u = tune_threshold(params, config, validation)
        extra["t_u"] = 0.5 if t_u is None else t_u
    _save(args, params, config, lineage, vocab, settings, corpus, history, extra)


def cmd_eval(args, settings):
    _require(args, "checkpoint_in", "corpus")
    vocab = _load_vocab(args)
    params, manifest = _load(args, vocab)
    config = manifest.model_config
    if manifest.labels is None:
        raise ValidationError("checkpoint carries no label inventories; fine-tune it first")
    labels = _labels_corpus(manifest.labels)
    corpus = load_corpus(args.corpus)
    split = _select_split(corpus, settings)
    pairs = split.labeled_user_turns()
    if not pairs:
        raise ValidationError("selected split has no labeled user turns")
    inputs = Encoder(vocab, labels).build_all(config, pairs)
    t_u = settings["t_u"] if settings["t_u"] is not None else manifest.extra.get("t_u", 0.5)
    frames = frames_from_predictions(predict_raw(inputs, params, config), labels, t_u)
    report = build_report(frames, [d.turns[i].labels for d, i in pairs], labels.annotates_user_acts)
    _emit(args, {"metrics": report.to_dict(), "t_u": t_u, "lineage": manifest.lineage,
                 "effective_config": echo(args, settings)})


def parse_history(lines) -> list[Turn]:
    turns = []
    for line in lines:
        who, sep, text = line.partition(":")
        who = who.strip().lower()
        if not sep or who not in (USER, SYSTEM):
            raise ValidationError(f"history turn {line!r} must look like 'user: ...' or 'system: ...'")
        turns.append(Turn(who, text.strip()))
    return turns


def cmd_predict(args, settings):
    _require(args, "checkpoint_in")
    vocab = _load_vocab(args)
    params, manifest = _load(args, vocab)
    if manifest.labels is None:
        raise ValidationError("checkpoint carries no label inventories; fine-tune it first")
    labels = _labels_corpus(manifest.labels)
    config = manifest.model_config
    turns = parse_history(args.history) + [Turn(USER, args.utterance)]
    dialogue = Dialogue("predict", tuple(turns))
    inp = Encoder(vocab, labels).build(dialogue, len(turns) - 1, config)
    t_u = settings["t_u"] if settings["t_u"] is not None else manifest.extra.get("t_u", 0.5)
    frame = predict_frame(inp, params, config, labels, t_u)
    _emit(args, frame.to_json())


def cmd_ablate(args, settings):
    if args.corpus:
        corpus = load_corpus(args.corpus)
        documents = generate_text_corpus(settings["seed"], settings["num_documents"])
        vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(
            corpus_text(corpus) + "\n" + "\n".join(" ".join(d) for d in documents), settings["vocab_size"])
        train, validation, test = split_corpus(corpus, seed=settings["split_seed"])
        setup = SyntheticSetup(corpus, vocab, train, validation, test, documents)
    else:
        setup = prepare_synthetic(settings["seed"], settings["num_dialogues"], settings["vocab_size"],
                                  settings["num_documents"])
    finetune = FinetuneSettings(epochs=settings["epochs"] or 30, learning_rate=settings["learning_rate"] or 1e-3,
                                batch_size=settings["batch_size"], num_layers=settings["num_layers"],
                                hidden_size=settings["hidden_size"], ff_size=settings["ff_size"],
                                num_heads=settings["num_heads"])
    table = run_ablation(setup, (settings["seed"],), finetune, PretrainSettings(), ABLATION_ROWS)
    _emit(args, {"rows": table, "effective_config": echo(args, settings)})


def cmd_grad_check(args, settings):
    suite = run_suite(settings["seed"])
    worst = {group: max(errors.values()) for group, errors in suite.items()}
    failures = {f"{g}/{n}": e for g, errs in suite.items() for n, e in errs.items() if not e < TOLERANCE}
    _emit(args, {"tolerance": TOLERANCE, "worst": worst, "failures": failures, "checks": suite})
    if failures:
        raise ValidationError(f"{len(failures)} gradient checks exceed {TOLERANCE}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "build-vocab": cmd_build_vocab,
    "pretrain": cmd_pretrain,
    "adapt-unsup": cmd_adapt_unsup,
    "adapt-sup": lambda a, s: _labeled_stage(a, s, Stage.SUP_ADAPT),
    "finetune": lambda a, s: _labeled_stage(a, s, Stage.FINETUNE),
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
}

VALIDATION_ERRORS = (ValidationError, CorpusError, VocabError, ContractError, LineageError, CheckpointError,
                     PairError, SequenceLengthError, ValueError, KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        COMMANDS[args.command](args, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"celt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"celt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VALIDATION_ERRORS as exc:
        print(f"celt: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
