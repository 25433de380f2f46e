import json

import pytest

from celt.data import Encoder
from celt.experiments import (
    ABLATION_ROWS,
    FinetuneSettings,
    PretrainSettings,
    model_config,
    prepare_synthetic,
    run_ablation,
    run_context_ablation,
    run_joint_vs_separate,
    run_transfer_lift,
)

TINY = FinetuneSettings(epochs=1, batch_size=16, num_layers=1, hidden_size=16, ff_size=32, num_heads=2)
TINY_PRETRAIN = PretrainSettings(pretrain_epochs=1, unsup_epochs=1, sup_epochs=1, batch_size=16)


@pytest.fixture(scope="module")
def setup():
    return prepare_synthetic(seed=0, num_dialogues=30, vocab_size=400, num_documents=20)


def test_ablation_rows_are_cumulative():
    names = [name for name, _ in ABLATION_ROWS]
    assert names == ["full", "-pretrain", "-speaker", "-context", "-system_acts"]
    for (_, prev), (_, cur) in zip(ABLATION_ROWS, ABLATION_ROWS[1:]):
        assert set(prev) <= set(cur)


def test_no_context_inputs_carry_no_history(setup):
    config = model_config(setup, TINY, enable_context=False)
    inputs = Encoder(setup.vocab, setup.corpus).build_all(config)
    assert all(inp.query_start == 1 for inp in inputs)
    assert all(setup.vocab.eou_id not in inp.token_ids for inp in inputs)


def test_small_ablation_table(setup):
    table = run_ablation(setup, seeds=(0,), settings=TINY, pretrain=TINY_PRETRAIN)
    assert [row["name"] for row in table] == [name for name, _ in ABLATION_ROWS]
    for row in table:
        assert 0.0 <= row["frame_accuracy"] <= row["intent_accuracy"] <= 1.0
    json.dumps(table)


def test_harness_results_are_json_ready(setup):
    ctx = run_context_ablation(setup, seeds=(0,), settings=TINY, keep_models=True)
    assert set(ctx["models"]) == {0}
    json.dumps({k: v for k, v in ctx.items() if k != "models"})
    joint = run_joint_vs_separate(setup, seeds=(0,), settings=TINY, joint_models=ctx["models"])
    assert joint["per_seed"][0]["joint"] == pytest.approx(ctx["per_seed"][0]["full"])
    assert joint["margin"] == pytest.approx(joint["mean"]["joint"] - joint["mean"]["separate"])
    lift = run_transfer_lift(setup, seeds=(0,), num_labeled=5, settings=TINY, pretrain=TINY_PRETRAIN)
    assert lift["lift"] == pytest.approx(lift["mean"]["transfer"] - lift["mean"]["scratch"])
    json.dumps(lift)


def test_transfer_lift_needs_unlabeled_dialogues(setup):
    with pytest.raises(ValueError):
        run_transfer_lift(setup, num_labeled=len(setup.train.dialogues))
