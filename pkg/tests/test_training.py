import json
import math

import numpy as np
import pytest

from celt.autodiff import ContractError
from celt.data import Encoder
from celt.experiments import gold_frames
from celt.model import collate, embed_input, encode, forward, init_parameters, init_pretraining_heads, joint_loss
from celt.seeding import substream
from celt.tokenizer import build_vocab, encode_utterance
from celt.training import (
    LEGAL_TRANSITIONS,
    STAGE_RESULT,
    ArchitectureMismatch,
    ICMode,
    LineageError,
    LineageTag,
    MaskingConfig,
    ModelLineage,
    PairError,
    SentencePair,
    Stage,
    StageData,
    StageSpec,
    Validation,
    load_stage_spec,
    make_batches,
    make_mlm_example,
    make_nsp_pairs,
    pretrain_loss,
    render_pair,
    run_stage,
    select_threshold,
    supervised_adaptive_loss,
    transfer_weights,
    tune_threshold,
)


# --- stage specs and lineage -------------------------------------------------

def test_stage_spec_fills_losses_and_rates():
    spec = StageSpec(Stage.FINETUNE)
    assert spec.losses == {"ic", "sf", "uac"}
    assert spec.learning_rate == 5e-5
    assert StageSpec("PRETRAIN").learning_rate == 1e-4
    assert StageSpec("UNSUP_ADAPT").learning_rate == 2e-5


@pytest.mark.parametrize("stage, losses", [
    (Stage.SUP_ADAPT, {"ic", "sf", "uac"}),
    (Stage.FINETUNE, {"ic", "sf"}),
    (Stage.PRETRAIN, {"mlm"}),
    (Stage.UNSUP_ADAPT, {"ic", "sf"}),
])
def test_stage_spec_rejects_wrong_losses(stage, losses):
    with pytest.raises(ValueError):
        StageSpec(stage, losses=losses)


def test_stage_spec_json_round_trip_and_digest(tmp_path):
    spec = StageSpec(Stage.SUP_ADAPT, epochs=3, seed=7, corpus="atis", ic_mode="SIGMOID")
    again = StageSpec.from_dict(spec.to_dict())
    assert again == spec and again.digest() == spec.digest()
    assert StageSpec(Stage.SUP_ADAPT, epochs=4, seed=7, corpus="atis").digest() != spec.digest()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert load_stage_spec(path) == spec


ALL_TAGS = [None, *LineageTag]


@pytest.mark.parametrize("start", ALL_TAGS)
@pytest.mark.parametrize("stage", list(Stage))
def test_lineage_transition_table(start, stage):
    lineage = ModelLineage(start)
    spec = StageSpec(stage)
    legal = (start, STAGE_RESULT[stage]) in LEGAL_TRANSITIONS
    if legal:
        new = lineage.advance(spec)
        assert new.tag is STAGE_RESULT[stage] and new.parent is start
        assert new.history == (spec.digest(),)
    else:
        with pytest.raises(LineageError):
            lineage.advance(spec)


def test_full_chain_and_round_trip():
    lineage = ModelLineage()
    for stage in Stage:
        lineage = lineage.advance(StageSpec(stage))
    assert lineage.tag is LineageTag.FINAL and len(lineage.history) == 4
    assert ModelLineage.from_dict(lineage.to_dict()) == lineage
    with pytest.raises(LineageError):
        lineage.advance(StageSpec(Stage.FINETUNE))


# --- masked LM ---------------------------------------------------------------

@pytest.fixture(scope="module")
def text_vocab():
    words = " ".join(f"w{i}" for i in range(40))
    return build_vocab(words + "\n" + words, 200)


def test_masking_config_validation():
    with pytest.raises(ValueError):
        MaskingConfig(mask_probability=0.0)
    with pytest.raises(ValueError):
        MaskingConfig(mask_token_fraction=0.7)


def test_specials_are_never_selected(text_vocab):
    v = text_vocab
    ids = [v.cls_id, v.sep_id, v.eou_id, v.pad_id] * 500
    _, positions, _ = make_mlm_example(ids, MaskingConfig(mask_probability=0.9), np.random.default_rng(0), v)
    assert positions.size == 0


def test_tiny_probability_selects_nothing(text_vocab):
    ids = np.full(5000, 10)
    _, positions, _ = make_mlm_example(ids, MaskingConfig(mask_probability=1e-12), np.random.default_rng(0),
                                       text_vocab)
    assert positions.size == 0


def test_selection_count_and_replacement_split(text_vocab):
    v = text_vocab
    n, p = 50_000, 0.15
    ids = np.random.default_rng(1).integers(len(v.special_ids), len(v), size=n)
    corrupted, positions, originals = make_mlm_example(ids, MaskingConfig(), np.random.default_rng(2), v)
    k = positions.size
    assert abs(k - n * p) < 3 * math.sqrt(n * p * (1 - p))
    np.testing.assert_array_equal(originals, ids[positions])
    untouched = np.ones(n, dtype=bool)
    untouched[positions] = False
    np.testing.assert_array_equal(corrupted[untouched], ids[untouched])
    masked = np.count_nonzero(corrupted[positions] == v.mask_id)
    assert abs(masked - 0.8 * k) < 3 * math.sqrt(k * 0.8 * 0.2)
    changed = np.count_nonzero((corrupted[positions] != v.mask_id) & (corrupted[positions] != originals))
    # a random replacement hits the original id with probability 1/(V - specials)
    p_changed = 0.1 * (1 - 1 / (len(v) - len(v.special_ids)))
    assert abs(changed - p_changed * k) < 3 * math.sqrt(k * p_changed * (1 - p_changed))
    assert np.all(corrupted[positions] >= len(v.special_ids) - 1)


# --- next-sentence pairs -----------------------------------------------------

def test_nsp_needs_two_groups_with_content(text_vocab):
    with pytest.raises(PairError):
        make_nsp_pairs([["w1 w2", "w3"]], np.random.default_rng(0), text_vocab)
    with pytest.raises(PairError):
        make_nsp_pairs([["w1"], ["w2"], ["w3"]], np.random.default_rng(0), text_vocab)


def test_nsp_balance_and_adjacency(text_vocab):
    docs = [[f"w{d % 40} w{s % 40} w{(d * s) % 40}" for s in range(60)] for d in range(200)]
    pairs = make_nsp_pairs(docs, np.random.default_rng(3), text_vocab)
    n = len(pairs)
    assert n >= 10_000
    positives = sum(p.is_next for p in pairs)
    assert abs(positives - n / 2) < 3 * math.sqrt(n / 4)
    # pairs are emitted in document order, one per adjacent sentence
    k = 0
    for doc in docs:
        for i in range(len(doc) - 1):
            if pairs[k].is_next:
                assert pairs[k].b == tuple(encode_utterance(doc[i + 1], text_vocab).ids)
            assert pairs[k].a == tuple(encode_utterance(doc[i], text_vocab).ids)
            k += 1


def test_nsp_pairs_fit_length_budget(text_vocab):
    long_doc = [" ".join(["w1"] * 200), " ".join(["w2"] * 200)]
    pairs = make_nsp_pairs([long_doc, ["w3", "w4"]], np.random.default_rng(0), text_vocab, max_length=32)
    assert all(len(p.a) + len(p.b) + 3 <= 32 for p in pairs)


def test_render_pair_layout(text_vocab):
    v = text_vocab
    ex = render_pair(SentencePair((10, 11), (12,), True), v, 3, None, None)
    inp = ex.model_input
    assert inp.token_ids == (v.cls_id, 10, 11, v.sep_id, 12, v.sep_id)
    assert inp.segment_ids == (0, 0, 0, 0, 1, 1)
    assert inp.system_act_nhot == (0, 0, 0)
    assert ex.mlm_positions == ()


# --- losses ------------------------------------------------------------------

@pytest.fixture(scope="module")
def pretrain_setup(small_config, small_vocab):
    params = init_parameters(small_config, np.random.default_rng(0), dtype=np.float64)
    init_pretraining_heads(params, small_config, np.random.default_rng(1))
    examples = [render_pair(SentencePair(tuple(range(10, 16)), tuple(range(20, 24)), bool(i % 2)), small_vocab,
                            small_config.num_system_acts, MaskingConfig(mask_probability=0.3),
                            np.random.default_rng(i)) for i in range(4)]
    batch = collate([e.model_input for e in examples])
    hidden = encode(embed_input(batch, params, small_config), params, small_config, batch.attention_mask)
    rows = [b for b, e in enumerate(examples) for _ in e.mlm_positions]
    cols = [p for e in examples for p in e.mlm_positions]
    labels = [l for e in examples for l in e.mlm_labels]
    return params, hidden, rows, cols, labels, [e.is_next for e in examples]


def test_pretrain_loss_is_mlm_plus_nsp(pretrain_setup, small_config):
    params, hidden, rows, cols, labels, is_next = pretrain_setup
    assert rows, "fixture should mask something"
    both = pretrain_loss(hidden, params, small_config, rows, cols, labels, is_next).item()
    nsp = pretrain_loss(hidden, params, small_config, [], [], [], is_next).item()
    mlm = pretrain_loss(hidden, params, small_config, rows, cols, labels, None).item()
    assert both == pytest.approx(nsp + mlm, rel=1e-12)
    assert nsp > 0 and mlm > 0


def test_supervised_adaptive_loss_is_joint_without_acts(small_config, small_inputs):
    params = init_parameters(small_config, np.random.default_rng(0), dtype=np.float64)
    batch = collate(small_inputs[:5])
    out = forward(batch, params, small_config)
    sup = supervised_adaptive_loss(out, batch, params, small_config).item()
    assert sup == pytest.approx(joint_loss(out, batch, params, small_config, heads=("ic", "sf")).item())
    full = joint_loss(out, batch, params, small_config).item()
    acts = joint_loss(out, batch, params, small_config, heads=("uac",)).item()
    assert full == pytest.approx(sup + acts, rel=1e-12)


def test_multi_intent_needs_sigmoid_mode(small_config, small_inputs):
    params = init_parameters(small_config, np.random.default_rng(0), dtype=np.float64)
    batch = collate(small_inputs[:3])
    batch.intent_nhot = batch.intent_nhot.copy()
    batch.intent_nhot[0, :2] = 1
    out = forward(batch, params, small_config)
    with pytest.raises(ContractError):
        supervised_adaptive_loss(out, batch, params, small_config, ICMode.SOFTMAX)
    assert supervised_adaptive_loss(out, batch, params, small_config, ICMode.SIGMOID).item() > 0


# --- weight transfer ---------------------------------------------------------

def test_transfer_copies_encoder_and_refreshes_heads(small_config, small_inputs):
    source = init_parameters(small_config, np.random.default_rng(0), dtype=np.float64, pretraining=True)
    target_config = small_config.replace(num_intents=small_config.num_intents + 2, num_system_acts=2)
    moved = transfer_weights(source, small_config, target_config, np.random.default_rng(5))
    for name in source.names():
        if name.startswith(("embeddings.token", "embeddings.position", "encoder.")):
            np.testing.assert_array_equal(moved[name].data, source[name].data)
    assert moved["embeddings.system_act"].shape == (small_config.hidden_size, 2)
    assert moved["heads.intent.out.weight"].shape[1] == target_config.num_intents
    assert not np.array_equal(moved["heads.slot.ff.weight"].data, source["heads.slot.ff.weight"].data)
    assert not any(n.startswith("pretrain.") for n in moved.names())


def test_transfer_rejects_mismatched_encoders(small_config):
    source = init_parameters(small_config, np.random.default_rng(0))
    bad = small_config.replace(hidden_size=32, num_heads=2, num_layers=2)
    with pytest.raises(ArchitectureMismatch, match="hidden_size.*num_layers"):
        transfer_weights(source, small_config, bad, np.random.default_rng(0))


def test_zero_epochs_keeps_encoder_outputs(small_config, small_inputs):
    source = init_parameters(small_config, np.random.default_rng(0), dtype=np.float64)
    moved = transfer_weights(source, small_config, small_config, np.random.default_rng(1))
    spec = StageSpec(Stage.FINETUNE, epochs=0)
    trained, lineage, history = run_stage(moved, ModelLineage(LineageTag.THETA_A), spec, small_config,
                                          StageData(inputs=list(small_inputs[:4])))
    assert history == [] and lineage.tag is LineageTag.FINAL
    a = forward(small_inputs[:4], source, small_config).hidden.data
    b = forward(small_inputs[:4], trained, small_config).hidden.data
    np.testing.assert_array_equal(a, b)


# --- training loop -----------------------------------------------------------

def test_run_stage_is_deterministic_and_learns(small_config, small_inputs):
    params = init_parameters(small_config, np.random.default_rng(0))
    spec = StageSpec(Stage.FINETUNE, epochs=30, batch_size=5, learning_rate=1e-2, seed=3)
    data = StageData(inputs=list(small_inputs[:10]))
    a, _, hist = run_stage(params, ModelLineage(), spec, small_config, data)
    b, _, _ = run_stage(params, ModelLineage(), spec, small_config, data)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a.names())
    losses = [h["train_loss"] for h in hist]
    assert losses[-1] < 0.5 * losses[0]
    # the input parameters are left alone
    fresh = init_parameters(small_config, np.random.default_rng(0))
    assert all(np.array_equal(params[n].data, fresh[n].data) for n in params.names())


def test_run_stage_rejects_illegal_and_empty(small_config, small_inputs):
    params = init_parameters(small_config, np.random.default_rng(0))
    with pytest.raises(LineageError):
        run_stage(params, ModelLineage(LineageTag.FINAL), StageSpec(Stage.FINETUNE), small_config,
                  StageData(inputs=list(small_inputs[:2])))
    with pytest.raises(ValueError):
        run_stage(params, ModelLineage(), StageSpec(Stage.FINETUNE), small_config, StageData())
    with pytest.raises(ValueError):
        run_stage(params, ModelLineage(), StageSpec(Stage.PRETRAIN), small_config, StageData())


def test_pretrain_stage_runs_and_adds_heads(small_config, small_corpus, small_vocab):
    params = init_parameters(small_config, np.random.default_rng(0))
    pairs = make_nsp_pairs(small_corpus, np.random.default_rng(0), small_vocab)[:40]
    spec = StageSpec(Stage.PRETRAIN, epochs=2, batch_size=8, learning_rate=1e-3)
    out, lineage, hist = run_stage(params, ModelLineage(), spec, small_config,
                                   StageData(pairs=pairs, vocab=small_vocab))
    assert lineage.tag is LineageTag.THETA_A
    assert "pretrain.nsp.out.weight" in out
    assert len(hist) == 2 and all(np.isfinite(h["train_loss"]) for h in hist)


def test_make_batches_covers_every_example_once(small_inputs):
    for bucket in (True, False):
        batches = make_batches(small_inputs, 7, np.random.default_rng(0), bucket)
        flat = sorted(i for b in batches for i in b)
        assert flat == list(range(len(small_inputs)))
        assert all(len(b) <= 7 for b in batches)


def test_threshold_selection():
    assert select_threshold({0.3: 0.8, 0.4: 0.9, 0.5: 0.85}) == 0.4
    assert select_threshold({0.3: 0.9, 0.4: 0.9, 0.5: 0.7}) == 0.4


def test_tune_threshold_contracts(small_corpus, small_vocab, small_config):
    params = init_parameters(small_config, np.random.default_rng(0))
    pairs = small_corpus.labeled_user_turns()
    inputs = Encoder(small_vocab, small_corpus).build_all(small_config, pairs)
    validation = Validation(inputs, gold_frames(small_corpus), small_corpus)
    assert tune_threshold(params, small_config, validation) in (0.3, 0.4, 0.5)
    no_acts = small_config.replace(num_user_acts=0)
    with pytest.raises(ContractError):
        tune_threshold(init_parameters(no_acts, np.random.default_rng(0)), no_acts, validation)


def test_substreams_are_independent_of_each_other():
    a = substream(1, "shuffle").random(4)
    assert np.array_equal(a, substream(1, "shuffle").random(4))
    assert not np.array_equal(a, substream(1, "dropout").random(4))
    assert not np.array_equal(a, substream(2, "shuffle").random(4))
