"""Dialogue corpus model, JSON ingestion, BIO codec and model-input assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import Vocab, encode_utterance

USER = "user"
SYSTEM = "system"

SPEAKER_USER = 0
SPEAKER_SYSTEM = 1
SPEAKER_SPECIAL = 2

OUTSIDE = "O"


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class CorpusError(ValueError):
    """Base class for corpus problems. Carries the offending location."""

    def __init__(self, message: str, dialogue_id=None, turn_index=None):
        where = []
        if dialogue_id is not None:
            where.append(f"dialogue {dialogue_id!r}")
        if turn_index is not None:
            where.append(f"turn {turn_index}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index


class CorpusFormatError(CorpusError):
    """The file is not valid JSON."""


class SchemaError(CorpusError):
    """The JSON does not follow the corpus schema."""


class SpanRangeError(CorpusError):
    """A slot span falls outside its utterance."""


class SpanOverlapError(CorpusError):
    """Two slot spans in one frame overlap."""


class SequenceLengthError(ValueError):
    """The current query alone does not fit in the model's maximum length."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemAct:
    act_type: str
    slot: str | None = None

    def __post_init__(self):
        if not self.act_type:
            raise ValueError("system act type must be nonempty")

    @property
    def key(self) -> str:
        return f"{self.act_type}({self.slot})" if self.slot else self.act_type


@dataclass(frozen=True, order=True)
class SlotSpan:
    slot: str
    start_word: int
    end_word: int


@dataclass(frozen=True)
class SemanticFrame:
    intent: str
    user_acts: frozenset = frozenset()
    slots: tuple[SlotSpan, ...] = ()
    # Only supervised adaptive corpora may carry several intents per sample.
    extra_intents: tuple[str, ...] = ()

    @property
    def intents(self) -> tuple[str, ...]:
        return (self.intent,) + self.extra_intents

    def to_json(self) -> dict:
        intent = list(self.intents) if self.extra_intents else self.intent
        return {
            "intent": intent,
            "user_acts": sorted(self.user_acts),
            "slots": [
                {"slot": s.slot, "start_word": s.start_word, "end_word": s.end_word}
                for s in sorted(self.slots, key=lambda s: (s.start_word, s.end_word, s.slot))
            ],
        }


@dataclass(frozen=True)
class Turn:
    speaker: str
    utterance: str
    system_acts: tuple[SystemAct, ...] = ()
    labels: SemanticFrame | None = None

    @property
    def words(self) -> list[str]:
        return self.utterance.split()


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class Corpus:
    """Dialogues plus sorted label vocabularies.

    ``slot_tags`` is the BIO tag inventory: ``O`` first, then ``B-``/``I-``
    pairs for every slot name in sorted order.
    """

    dialogues: tuple[Dialogue, ...]
    intents: tuple[str, ...]
    user_acts: tuple[str, ...]
    slots: tuple[str, ...]
    system_acts: tuple[str, ...]
    annotates_user_acts: bool = True

    @property
    def slot_tags(self) -> tuple[str, ...]:
        tags = [OUTSIDE]
        for s in self.slots:
            tags += [f"B-{s}", f"I-{s}"]
        return tuple(tags)

    def __len__(self) -> int:
        return len(self.dialogues)

    @classmethod
    def from_dialogues(cls, dialogues: Iterable[Dialogue], like: "Corpus | None" = None) -> "Corpus":
        """Build a corpus, taking vocabularies from ``like`` when given."""
        dialogues = tuple(dialogues)
        if like is not None:
            return cls(dialogues, like.intents, like.user_acts, like.slots, like.system_acts,
                       like.annotates_user_acts)
        intents, acts, slots, sys_acts = set(), set(), set(), set()
        any_acts = False
        for d in dialogues:
            for t in d.turns:
                sys_acts.update(a.key for a in t.system_acts)
                if t.labels is not None:
                    intents.update(t.labels.intents)
                    acts.update(t.labels.user_acts)
                    any_acts = any_acts or bool(t.labels.user_acts)
                    slots.update(s.slot for s in t.labels.slots)
        return cls(dialogues, tuple(sorted(intents)), tuple(sorted(acts)),
                   tuple(sorted(slots)), tuple(sorted(sys_acts)), any_acts)

    def user_turns(self) -> list[tuple[Dialogue, int]]:
        return [(d, i) for d in self.dialogues for i, t in enumerate(d.turns) if t.speaker == USER]

    def labeled_user_turns(self) -> list[tuple[Dialogue, int]]:
        return [(d, i) for d, i in self.user_turns() if d.turns[i].labels is not None]

    def to_json(self) -> dict:
        out = []
        for d in self.dialogues:
            turns = []
            for t in d.turns:
                item = {"speaker": t.speaker, "utterance": t.utterance}
                if t.speaker == SYSTEM:
                    item["system_acts"] = [{"act": a.act_type, "slot": a.slot} for a in t.system_acts]
                elif t.labels is not None:
                    item["labels"] = t.labels.to_json()
                turns.append(item)
            out.append({"id": d.id, "turns": turns})
        return {"dialogues": out}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def without_labels(self) -> "Corpus":
        dialogues = tuple(
            Dialogue(d.id, tuple(Turn(t.speaker, t.utterance, t.system_acts) for t in d.turns))
            for d in self.dialogues
        )
        return Corpus(dialogues, self.intents, self.user_acts, self.slots, self.system_acts,
                      self.annotates_user_acts)


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------


def _expect(cond: bool, message: str, did, tidx) -> None:
    if not cond:
        raise SchemaError(message, did, tidx)


def _parse_frame(raw, n_words: int, did, tidx, allow_multi_intent: bool) -> SemanticFrame:
    _expect(isinstance(raw, dict), "labels must be an object", did, tidx)
    _expect(set(raw) <= {"intent", "user_acts", "slots"}, f"unknown label keys {sorted(set(raw) - {'intent', 'user_acts', 'slots'})}", did, tidx)
    intent = raw.get("intent")
    extra: tuple[str, ...] = ()
    if isinstance(intent, list) and allow_multi_intent:
        _expect(len(intent) >= 1 and all(isinstance(i, str) and i for i in intent),
                "intent list must hold nonempty strings", did, tidx)
        intent, extra = intent[0], tuple(intent[1:])
    _expect(isinstance(intent, str) and bool(intent), "labels.intent must be a nonempty string", did, tidx)
    acts = raw.get("user_acts", [])
    _expect(isinstance(acts, list) and all(isinstance(a, str) and a for a in acts),
            "labels.user_acts must be a list of strings", did, tidx)
    raw_slots = raw.get("slots", [])
    _expect(isinstance(raw_slots, list), "labels.slots must be a list", did, tidx)
    spans = []
    for s in raw_slots:
        _expect(isinstance(s, dict) and set(s) == {"slot", "start_word", "end_word"},
                "each slot needs exactly slot/start_word/end_word", did, tidx)
        _expect(isinstance(s["slot"], str) and bool(s["slot"]), "slot name must be a nonempty string", did, tidx)
        for k in ("start_word", "end_word"):
            _expect(isinstance(s[k], int) and not isinstance(s[k], bool), f"{k} must be an integer", did, tidx)
        span = SlotSpan(s["slot"], s["start_word"], s["end_word"])
        if not 0 <= span.start_word < span.end_word <= n_words:
            raise SpanRangeError(
                f"span {span.slot}[{span.start_word}:{span.end_word}] outside utterance of {n_words} words",
                did, tidx)
        spans.append(span)
    _check_overlap(spans, did, tidx)
    return SemanticFrame(intent, frozenset(acts), tuple(spans), extra)


def _check_overlap(spans: Sequence[SlotSpan], did=None, tidx=None) -> None:
    ordered = sorted(spans, key=lambda s: (s.start_word, s.end_word))
    for a, b in zip(ordered, ordered[1:]):
        if b.start_word < a.end_word:
            raise SpanOverlapError(f"spans {a} and {b} overlap", did, tidx)


def parse_corpus(raw, allow_multi_intent: bool = False) -> Corpus:
    """Validate a decoded JSON object and build a :class:`Corpus`."""
    _expect(isinstance(raw, dict) and set(raw) == {"dialogues"}, "top level must be {\"dialogues\": [...]}", None, None)
    _expect(isinstance(raw["dialogues"], list), "dialogues must be a list", None, None)
    dialogues = []
    seen_ids = set()
    for n, rd in enumerate(raw["dialogues"]):
        _expect(isinstance(rd, dict) and set(rd) == {"id", "turns"}, f"dialogue #{n} needs exactly id and turns", None, None)
        did = rd["id"]
        _expect(isinstance(did, str) and bool(did), f"dialogue #{n} id must be a nonempty string", None, None)
        _expect(did not in seen_ids, "duplicate dialogue id", did, None)
        seen_ids.add(did)
        _expect(isinstance(rd["turns"], list) and len(rd["turns"]) > 0, "turns must be a nonempty list", did, None)
        turns = []
        for tidx, rt in enumerate(rd["turns"]):
            _expect(isinstance(rt, dict), "turn must be an object", did, tidx)
            speaker = rt.get("speaker")
            _expect(speaker in (USER, SYSTEM), f"speaker must be 'user' or 'system', got {speaker!r}", did, tidx)
            utterance = rt.get("utterance")
            _expect(isinstance(utterance, str), "utterance must be a string", did, tidx)
            if speaker == USER:
                _expect("system_acts" not in rt, "user turns may not carry system_acts", did, tidx)
                _expect(set(rt) <= {"speaker", "utterance", "labels"}, f"unexpected keys {sorted(set(rt))}", did, tidx)
                labels = None
                if "labels" in rt:
                    labels = _parse_frame(rt["labels"], len(utterance.split()), did, tidx, allow_multi_intent)
                turns.append(Turn(USER, utterance, (), labels))
            else:
                _expect("labels" not in rt, "system turns may not carry labels", did, tidx)
                _expect(set(rt) <= {"speaker", "utterance", "system_acts"}, f"unexpected keys {sorted(set(rt))}", did, tidx)
                acts = []
                for ra in rt.get("system_acts", []):
                    _expect(isinstance(ra, dict) and set(ra) <= {"act", "slot"} and "act" in ra,
                            "system act needs act and optional slot", did, tidx)
                    _expect(isinstance(ra["act"], str) and bool(ra["act"]), "act must be a nonempty string", did, tidx)
                    slot = ra.get("slot")
                    _expect(slot is None or isinstance(slot, str), "slot must be a string or null", did, tidx)
                    acts.append(SystemAct(ra["act"], slot or None))
                turns.append(Turn(SYSTEM, utterance, tuple(acts)))
        dialogues.append(Dialogue(did, tuple(turns)))
    return Corpus.from_dialogues(dialogues)


def load_corpus(path, allow_multi_intent: bool = False) -> Corpus:
    """Read and validate a corpus JSON file.

    Raises:
        CorpusFormatError: the file is not JSON.
        SchemaError: structure, types or speaker invariants are violated.
        SpanRangeError: a span lies outside its utterance.
        SpanOverlapError: two spans of one frame overlap.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{path}: malformed JSON ({exc})") from exc
    return parse_corpus(raw, allow_multi_intent)


# ---------------------------------------------------------------------------
# BIO codec
# ---------------------------------------------------------------------------


def bio_encode(spans: Iterable[SlotSpan], word_count: int) -> list[str]:
    spans = list(spans)
    _check_overlap(spans)
    tags = [OUTSIDE] * word_count
    for s in spans:
        if not 0 <= s.start_word < s.end_word <= word_count:
            raise SpanRangeError(f"span {s} outside {word_count} words")
        tags[s.start_word] = f"B-{s.slot}"
        for i in range(s.start_word + 1, s.end_word):
            tags[i] = f"I-{s.slot}"
    return tags


def bio_decode(tags: Sequence[str]) -> list[SlotSpan]:
    """Spans from BIO tags. A stray ``I-x`` opens a new span of type ``x``."""
    spans = []
    cur_slot, cur_start = None, 0
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and cur_slot == tag[2:]:
            continue
        if cur_slot is not None:
            spans.append(SlotSpan(cur_slot, cur_start, i))
            cur_slot = None
        if tag.startswith(("B-", "I-")):
            cur_slot, cur_start = tag[2:], i
    if cur_slot is not None:
        spans.append(SlotSpan(cur_slot, cur_start, len(tags)))
    return spans


# ---------------------------------------------------------------------------
# Model inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelInput:
    """One example laid out for the encoder.

    ``word_starts`` are absolute sequence positions of each current-query
    word's first sub-token. Target fields are ``None`` for unlabeled turns.
    """

    token_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    speaker_ids: tuple[int, ...]
    system_act_nhot: tuple[int, ...]
    word_starts: tuple[int, ...]
    attention_mask: tuple[int, ...]
    intent: int | None = None
    intent_nhot: tuple[int, ...] | None = None
    user_acts: tuple[int, ...] | None = None
    tags: tuple[int, ...] | None = None
    query_start: int = 1

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class InputConfig:
    max_sequence_length: int = 128
    enable_context: bool = True


class Encoder:
    """Caches utterance tokenizations for repeated input assembly."""

    def __init__(self, vocab: Vocab, corpus: Corpus):
        self.vocab = vocab
        self.corpus = corpus
        self._cache: dict[str, tuple] = {}
        self._act_index = {a: i for i, a in enumerate(corpus.system_acts)}
        self._intent_index = {a: i for i, a in enumerate(corpus.intents)}
        self._uact_index = {a: i for i, a in enumerate(corpus.user_acts)}
        self._tag_index = {a: i for i, a in enumerate(corpus.slot_tags)}

    def tokens(self, utterance: str):
        hit = self._cache.get(utterance)
        if hit is None:
            hit = encode_utterance(utterance, self.vocab)
            self._cache[utterance] = hit
        return hit

    def system_act_nhot(self, turns: Sequence[Turn], turn_index: int) -> tuple[int, ...]:
        nhot = [0] * len(self.corpus.system_acts)
        for t in reversed(turns[:turn_index]):
            if t.speaker == SYSTEM:
                for a in t.system_acts:
                    if a.key in self._act_index:
                        nhot[self._act_index[a.key]] = 1
                break
        return tuple(nhot)

    def build(self, dialogue: Dialogue, turn_index: int, config) -> ModelInput:
        vocab = self.vocab
        turns = dialogue.turns
        current = turns[turn_index]
        if current.speaker != USER:
            raise ValueError(f"turn {turn_index} of dialogue {dialogue.id!r} is not a user turn")
        query = self.tokens(current.utterance)
        max_len = config.max_sequence_length
        if len(query.ids) + 2 > max_len:
            raise SequenceLengthError(
                f"dialogue {dialogue.id!r} turn {turn_index}: query of {len(query.ids)} sub-tokens "
                f"cannot fit in {max_len} positions")

        history = []
        if getattr(config, "enable_context", True):
            history = [(t.speaker, self.tokens(t.utterance).ids) for t in turns[:turn_index]]
        # [CLS] + each history turn with [EOU] + [SEP] + query + [SEP]
        def total(hist):
            if not hist:
                return len(query.ids) + 2
            return 1 + sum(len(ids) + 1 for _, ids in hist) + 1 + len(query.ids) + 1

        while history and total(history) > max_len:
            history.pop(0)

        tokens = [vocab.cls_id]
        segments = [0]
        speakers = [SPEAKER_SPECIAL]
        for speaker, ids in history:
            tokens += list(ids) + [vocab.eou_id]
            segments += [0] * (len(ids) + 1)
            who = SPEAKER_USER if speaker == USER else SPEAKER_SYSTEM
            speakers += [who] * len(ids) + [SPEAKER_SPECIAL]
        if history:
            tokens.append(vocab.sep_id)
            segments.append(0)
            speakers.append(SPEAKER_SPECIAL)
        query_start = len(tokens)
        tokens += list(query.ids) + [vocab.sep_id]
        segments += [1] * (len(query.ids) + 1)
        speakers += [SPEAKER_USER] * len(query.ids) + [SPEAKER_SPECIAL]

        word_starts = tuple(query_start + s for s in query.word_starts)
        intent = intent_nhot = uacts = tags = None
        frame = current.labels
        if frame is not None:
            if frame.intent in self._intent_index:
                intent = self._intent_index[frame.intent]
                intent_nhot = [0] * len(self.corpus.intents)
                for name in frame.intents:
                    intent_nhot[self._intent_index[name]] = 1
                intent_nhot = tuple(intent_nhot)
            uacts = [0] * len(self.corpus.user_acts)
            for a in frame.user_acts:
                if a in self._uact_index:
                    uacts[self._uact_index[a]] = 1
            uacts = tuple(uacts)
            tags = tuple(self._tag_index.get(t, 0)
                         for t in bio_encode(frame.slots, len(query.word_starts)))

        n = len(tokens)
        return ModelInput(
            token_ids=tuple(tokens),
            position_ids=tuple(range(n)),
            segment_ids=tuple(segments),
            speaker_ids=tuple(speakers),
            system_act_nhot=self.system_act_nhot(turns, turn_index),
            word_starts=word_starts,
            attention_mask=(1,) * n,
            intent=intent,
            intent_nhot=intent_nhot,
            user_acts=uacts,
            tags=tags,
            query_start=query_start,
        )

    def build_all(self, config, pairs=None) -> list[ModelInput]:
        if pairs is None:
            pairs = self.corpus.user_turns()
        return [self.build(d, i, config) for d, i in pairs]


def build_input_sequence(dialogue: Dialogue, turn_index: int, vocab: Vocab, corpus: Corpus,
                         config=InputConfig()) -> ModelInput:
    """Lay out one user turn with its history for the encoder.

    ``config`` needs ``max_sequence_length`` and optionally ``enable_context``.
    History turns are dropped oldest-first until the sequence fits; the
    current query is never truncated.
    """
    return Encoder(vocab, corpus).build(dialogue, turn_index, config)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def split_corpus(corpus: Corpus, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Dialogue-level train/validation/test partition, deterministic by seed."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(corpus.dialogues)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(f"split of {n} dialogues by {fractions} leaves an empty part")
    order = np.random.default_rng(seed).permutation(n)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(
        Corpus.from_dialogues((corpus.dialogues[i] for i in sorted(idx)), like=corpus)
        for idx in parts
    )
