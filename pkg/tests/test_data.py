import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celt.data import (
    SPEAKER_SPECIAL,
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    Corpus,
    CorpusFormatError,
    Dialogue,
    Encoder,
    InputConfig,
    SchemaError,
    SemanticFrame,
    SequenceLengthError,
    SlotSpan,
    SpanOverlapError,
    SpanRangeError,
    SystemAct,
    Turn,
    bio_decode,
    bio_encode,
    build_input_sequence,
    load_corpus,
    parse_corpus,
    split_corpus,
)
from celt.tokenizer import build_vocab


def _raw(turns):
    return {"dialogues": [{"id": "d0", "turns": turns}]}


GOOD_TURNS = [
    {"speaker": "user", "utterance": "book a table at nopa",
     "labels": {"intent": "RESERVE", "user_acts": ["inform"],
                "slots": [{"slot": "restaurant_name", "start_word": 4, "end_word": 5}]}},
    {"speaker": "system", "utterance": "how many people", "system_acts": [{"act": "request", "slot": "num_people"}]},
    {"speaker": "user", "utterance": "4",
     "labels": {"intent": "RESERVE", "user_acts": ["inform"],
                "slots": [{"slot": "num_people", "start_word": 0, "end_word": 1}]}},
]


def test_parse_builds_sorted_inventories():
    corpus = parse_corpus(_raw(GOOD_TURNS))
    assert corpus.intents == ("RESERVE",)
    assert corpus.slot_tags == ("O", "B-num_people", "I-num_people", "B-restaurant_name", "I-restaurant_name")
    assert corpus.system_acts == ("request(num_people)",)


def test_corpus_save_load_round_trip(tmp_path, small_corpus):
    path = tmp_path / "c.json"
    small_corpus.save(path)
    again = load_corpus(path)
    assert again == small_corpus
    assert again.dumps() == small_corpus.dumps()


def test_malformed_json_is_a_format_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(CorpusFormatError):
        load_corpus(path)


@pytest.mark.parametrize("mutate, error", [
    (lambda t: t[0].pop("utterance"), SchemaError),
    (lambda t: t[0].update(speaker="bot"), SchemaError),
    (lambda t: t[1].update(labels={"intent": "X"}), SchemaError),
    (lambda t: t[0]["labels"].update(intent=""), SchemaError),
    (lambda t: t[0]["labels"]["slots"].append({"slot": "x", "start_word": 4, "end_word": 9}), SpanRangeError),
    (lambda t: t[0]["labels"]["slots"].append({"slot": "x", "start_word": 3, "end_word": 5}), SpanOverlapError),
    (lambda t: t[2]["labels"]["slots"][0].update(start_word=1), SpanRangeError),
])
def test_schema_violations_raise_with_location(mutate, error):
    turns = json.loads(json.dumps(GOOD_TURNS))
    mutate(turns)
    with pytest.raises(error) as info:
        parse_corpus(_raw(turns))
    assert info.value.dialogue_id == "d0"


def test_multi_intent_needs_opt_in():
    turns = json.loads(json.dumps(GOOD_TURNS))
    turns[0]["labels"]["intent"] = ["RESERVE", "FIND"]
    with pytest.raises(SchemaError):
        parse_corpus(_raw(turns))
    corpus = parse_corpus(_raw(turns), allow_multi_intent=True)
    assert corpus.dialogues[0].turns[0].labels.intents == ("RESERVE", "FIND")


@st.composite
def span_sets(draw):
    n = draw(st.integers(0, 12))
    cuts = sorted(draw(st.sets(st.integers(0, n), max_size=8)))
    spans = []
    for a, b in zip(cuts, cuts[1:]):
        if draw(st.booleans()):
            spans.append(SlotSpan(draw(st.sampled_from(["time", "date", "name"])), a, b))
    return n, spans


@settings(max_examples=300, deadline=None)
@given(span_sets())
def test_bio_round_trip(case):
    n, spans = case
    tags = bio_encode(spans, n)
    assert len(tags) == n
    assert sorted(bio_decode(tags)) == sorted(spans)


def test_bio_decode_stray_inside_opens_span():
    assert bio_decode(["O", "I-time", "I-time", "B-date", "I-time"]) == [
        SlotSpan("time", 1, 3), SlotSpan("date", 3, 4), SlotSpan("time", 4, 5)]


def test_bio_encode_rejects_overlap_and_range():
    with pytest.raises(SpanOverlapError):
        bio_encode([SlotSpan("a", 0, 2), SlotSpan("b", 1, 3)], 4)
    with pytest.raises(SpanRangeError):
        bio_encode([SlotSpan("a", 2, 5)], 4)


@pytest.fixture(scope="module")
def toy():
    corpus = parse_corpus(_raw(GOOD_TURNS))
    vocab = build_vocab("book a table at nopa how many people 4 4 4 book book", 60)
    return corpus, vocab


def test_layout_with_history(toy):
    corpus, vocab = toy
    inp = build_input_sequence(corpus.dialogues[0], 2, vocab, corpus)
    ids = list(inp.token_ids)
    assert ids[0] == vocab.cls_id
    assert ids.count(vocab.eou_id) == 2
    assert ids.count(vocab.sep_id) == 2 and ids[-1] == vocab.sep_id
    history_sep = ids.index(vocab.sep_id)
    assert history_sep == inp.query_start - 1
    assert all(s == 0 for s in inp.segment_ids[: inp.query_start])
    assert all(s == 1 for s in inp.segment_ids[inp.query_start:])
    for pos, tok in enumerate(ids):
        if tok in (vocab.cls_id, vocab.sep_id, vocab.eou_id):
            assert inp.speaker_ids[pos] == SPEAKER_SPECIAL
    # the first history turn is the user, the second the system
    first_eou = ids.index(vocab.eou_id)
    assert set(inp.speaker_ids[1:first_eou]) == {SPEAKER_USER}
    assert set(inp.speaker_ids[first_eou + 1: history_sep - 1]) == {SPEAKER_SYSTEM}
    assert set(inp.speaker_ids[inp.query_start:-1]) == {SPEAKER_USER}
    assert inp.system_act_nhot == (1,)
    assert inp.word_starts == (inp.query_start,)
    assert inp.tags == (corpus.slot_tags.index("B-num_people"),)


def test_layout_without_history(toy):
    corpus, vocab = toy
    inp = build_input_sequence(corpus.dialogues[0], 0, vocab, corpus)
    assert inp.token_ids[0] == vocab.cls_id and inp.token_ids[-1] == vocab.sep_id
    assert vocab.eou_id not in inp.token_ids
    assert inp.query_start == 1
    assert inp.system_act_nhot == (0,)


def test_no_context_drops_history_but_keeps_system_acts(toy):
    corpus, vocab = toy
    inp = build_input_sequence(corpus.dialogues[0], 2, vocab, corpus, InputConfig(enable_context=False))
    assert inp.query_start == 1
    assert vocab.eou_id not in inp.token_ids


def test_truncation_drops_oldest_turns_first(toy):
    corpus, vocab = toy
    full = build_input_sequence(corpus.dialogues[0], 2, vocab, corpus)
    tight = build_input_sequence(corpus.dialogues[0], 2, vocab, corpus, InputConfig(max_sequence_length=len(full) - 1))
    assert len(tight) < len(full)
    assert tight.token_ids.count(vocab.eou_id) == 1
    # what survives is the most recent (system) turn
    assert tight.token_ids[1:tight.token_ids.index(vocab.eou_id)] == full.token_ids[
        full.token_ids.index(vocab.eou_id) + 1: full.query_start - 2]


def test_query_too_long_raises(toy):
    corpus, vocab = toy
    with pytest.raises(SequenceLengthError):
        build_input_sequence(corpus.dialogues[0], 0, vocab, corpus, InputConfig(max_sequence_length=4))


def test_system_acts_come_from_latest_system_turn():
    turns = (
        Turn("system", "hi", (SystemAct("greeting"),)),
        Turn("user", "hello", labels=SemanticFrame("A")),
        Turn("system", "which date", (SystemAct("request", "date"),)),
        Turn("user", "friday", labels=SemanticFrame("A")),
    )
    corpus = Corpus.from_dialogues([Dialogue("x", turns)])
    vocab = build_vocab("hi hello which date friday", 40)
    enc = Encoder(vocab, corpus)
    latest = enc.build(corpus.dialogues[0], 3, InputConfig())
    expected = tuple(int(a == "request(date)") for a in corpus.system_acts)
    assert latest.system_act_nhot == expected
    first = enc.build(corpus.dialogues[0], 1, InputConfig())
    assert first.system_act_nhot == tuple(int(a == "greeting") for a in corpus.system_acts)


def test_layout_invariants_over_synthetic_inputs(small_inputs, small_vocab):
    v = small_vocab
    for inp in small_inputs:
        ids = inp.token_ids
        assert ids[0] == v.cls_id and ids[-1] == v.sep_id
        n_sep = ids.count(v.sep_id)
        assert n_sep in (1, 2)
        assert (n_sep == 2) == (ids.count(v.eou_id) > 0)
        assert len(set(map(len, (ids, inp.segment_ids, inp.speaker_ids, inp.position_ids)))) == 1
        assert all(inp.query_start <= s < len(ids) - 1 for s in inp.word_starts)


def test_split_is_a_deterministic_partition(small_corpus):
    parts = split_corpus(small_corpus, seed=4)
    again = split_corpus(small_corpus, seed=4)
    ids = [sorted(d.id for d in p.dialogues) for p in parts]
    assert ids == [sorted(d.id for d in p.dialogues) for p in again]
    flat = sum(ids, [])
    assert sorted(flat) == sorted(d.id for d in small_corpus.dialogues)
    assert len(set(flat)) == len(flat)
    assert all(p.intents == small_corpus.intents for p in parts)


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.8, 0.1, 0.2), (1.0, 0.0, 0.0)])
def test_split_rejects_bad_fractions(small_corpus, fractions):
    with pytest.raises(ValueError):
        split_corpus(small_corpus, fractions)


def test_without_labels_strips_frames(small_corpus):
    bare = small_corpus.without_labels()
    assert not bare.labeled_user_turns()
    assert len(bare.user_turns()) == len(small_corpus.user_turns())
    assert np.all([t.system_acts == o.system_acts for d, e in zip(bare.dialogues, small_corpus.dialogues)
                   for t, o in zip(d.turns, e.turns)])
