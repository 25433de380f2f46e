"""Train a small context-aware SLU model on synthetic dialogues and inspect it.

Run from the repository root:

    python3 demos/quickstart.py --epochs 10

The script fine-tunes a 2-layer encoder from scratch, prints test metrics,
then decodes one bare-number answer with and without its dialogue history
to show why context matters.
"""

import argparse
import json

from celt.data import SYSTEM, USER, Dialogue, Encoder, SystemAct, Turn
from celt.experiments import FinetuneSettings, evaluate_corpus, finetune, model_config, prepare_synthetic
from celt.model import init_parameters, predict_frame
from celt.seeding import substream
from celt.training import ModelLineage


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dialogues", type=int, default=300)
    parser.add_argument("--epochs", type=int, default=10)
    args = parser.parse_args()

    setup = prepare_synthetic(args.seed, args.dialogues)
    settings = FinetuneSettings(epochs=args.epochs)
    config = model_config(setup, settings)
    print(f"{len(setup.train.dialogues)} training dialogues, vocabulary of {len(setup.vocab)} pieces, "
          f"{setup.ambiguous_fraction:.0%} of user turns need context")

    params = init_parameters(config, substream(args.seed, "init"))
    params, _ = finetune(params, ModelLineage(), config, setup.vocab, setup.train, setup.corpus, args.seed, settings)
    report = evaluate_corpus(params, config, setup.vocab, setup.test, setup.corpus)
    print(json.dumps({k: round(v, 3) for k, v in report.to_dict().items() if isinstance(v, float)}, indent=2))

    encoder = Encoder(setup.vocab, setup.corpus)
    openings = {"num_people": "book a table at nopa", "time": "book a table at nopa",
                "num_tickets": "i want tickets for a movie"}
    questions = {"num_people": "how many people", "time": "what time", "num_tickets": "how many tickets"}
    for slot, question in questions.items():
        turns = (Turn(USER, openings[slot]), Turn(SYSTEM, question, (SystemAct("request", slot),)), Turn(USER, "7"))
        frame = predict_frame(encoder.build(Dialogue("demo", turns), 2, config), params, config, setup.corpus)
        print(f"system: {question!r:20} user: '7' -> {json.dumps(frame.to_json())}")

if __name__ == "__main__":
    main()
