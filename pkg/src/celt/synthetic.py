"""Template-grammar generator for small multi-turn restaurant/movie dialogues.

Dialogues mix two domains. Roughly a third of user turns are bare numbers
("5") answering a system request, so the slot type (party size, time or
ticket count) and the intent are recoverable only from the dialogue
context. Short confirmations ("yes", "thanks") are intent-ambiguous in the
same way.
"""

from __future__ import annotations

import numpy as np

from .data import (
    SYSTEM,
    USER,
    Corpus,
    Dialogue,
    SemanticFrame,
    SlotSpan,
    SystemAct,
    Turn,
)

RESTAURANTS = [
    "sakoon", "olivia", "zola", "nopa", "delfina", "kokkari", "tartine", "zuni", "perbacco",
    "lolinda", "nopalito", "burma superstar", "state bird", "the slanted door", "farmhouse",
    "rich table", "mourad", "lazy bear", "tacolicious", "gary danko", "flour water", "aster",
    "saison", "benu", "kin khao", "nari", "prubechu", "octavia", "che fico", "souvla",
    "lers ros", "starbelly", "wayfare tavern", "dosa", "ramen shop", "hog island", "rintaro",
    "bix", "waterbar", "cotogna",
]
MOVIES = [
    "inception", "zootopia", "arrival", "moana", "coco", "interstellar", "gravity", "frozen",
    "up", "jaws", "alien", "rocky", "vertigo", "casablanca", "amelie", "parasite", "titanic",
    "inside out", "star wars", "the matrix", "toy story", "finding nemo", "black panther",
    "wonder woman", "la la land", "the revenant", "spotlight", "moonlight", "dunkirk",
    "logan", "split", "get out", "sing", "trolls", "ferdinand", "wonder", "lady bird",
    "the post", "big fish", "hidden figures",
]
THEATRES = [
    "amc mercado", "cinemark", "century 16", "regal", "the castro", "alamo drafthouse",
    "roxie", "landmark", "balboa", "vogue",
]
CUISINES = [
    "italian", "chinese", "thai", "mexican", "indian", "french", "japanese", "korean",
    "greek", "vietnamese", "ethiopian", "burmese",
]
LOCATIONS = [
    "san jose", "palo alto", "mountain view", "sunnyvale", "berkeley", "oakland", "fremont",
    "cupertino", "milpitas", "santa clara",
]
DATES = ["today", "tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday",
         "saturday", "sunday", "next friday", "this weekend"]
TIMES = ["5pm", "6pm", "7pm", "8pm", "9pm", "6:30pm", "7:30pm", "noon", "8:30pm"]
BARE_NUMBERS = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "10"]
NUMBER_WORDS = ["two", "three", "four", "five", "six"]

INTENT_FIND = "FIND_RESTAURANT"
INTENT_RESERVE = "RESERVE_RESTAURANT"
INTENT_BUY = "BUY_MOVIE_TICKETS"

SLOT_QUESTIONS = {
    "restaurant_name": ["which restaurant", "which restaurant would you like"],
    "num_people": ["how many people", "for how many people"],
    "date": ["which day", "what date would you like"],
    "time": ["what time", "what time would you like"],
    "movie": ["which movie", "what movie would you like to see"],
    "theatre": ["which theatre", "which theatre do you prefer"],
    "num_tickets": ["how many tickets", "how many tickets do you need"],
    "cuisine": ["what kind of food", "which cuisine"],
    "location": ["where", "which city"],
}


def _span_words(words: list[str], slot: str, value: str, spans: list[SlotSpan]) -> None:
    n = len(value.split())
    spans.append(SlotSpan(slot, len(words), len(words) + n))
    words.extend(value.split())


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.turns: list[Turn] = []
        self.ambiguous = 0

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def chance(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def system(self, text: str, *acts: tuple[str, str | None]) -> None:
        self.turns.append(Turn(SYSTEM, text, tuple(SystemAct(a, s) for a, s in acts)))

    def user(self, parts, intent: str, acts) -> None:
        """``parts`` is a list of plain strings and ``(slot, value)`` pairs."""
        words: list[str] = []
        spans: list[SlotSpan] = []
        for p in parts:
            if isinstance(p, tuple):
                _span_words(words, p[0], p[1], spans)
            else:
                words.extend(p.split())
        frame = SemanticFrame(intent, frozenset(acts), tuple(spans))
        self.turns.append(Turn(USER, " ".join(words), (), frame))


def _fill_value(b: _Builder, slot: str) -> str:
    if slot == "restaurant_name":
        return b.pick(RESTAURANTS)
    if slot == "movie":
        return b.pick(MOVIES)
    if slot == "theatre":
        return b.pick(THEATRES)
    if slot == "cuisine":
        return b.pick(CUISINES)
    if slot == "location":
        return b.pick(LOCATIONS)
    if slot == "date":
        return b.pick(DATES)
    if slot == "time":
        return b.pick(TIMES)
    return b.pick(BARE_NUMBERS[1:6])


def _answer(b: _Builder, slot: str, intent: str) -> None:
    """User reply to ``request(slot)``; numeric slots are often bare numbers."""
    if slot in ("num_people", "num_tickets", "time") and b.chance(0.9):
        b.ambiguous += 1
        b.user([(slot, b.pick(BARE_NUMBERS))], intent, ["inform"])
        return
    value = _fill_value(b, slot)
    if slot == "num_people":
        parts = b.pick([[(slot, value), "people"], ["for", (slot, value)], ["we are", (slot, value)]])
    elif slot == "num_tickets":
        parts = b.pick([[(slot, value), "tickets"], [(slot, value), "tickets please"]])
    elif slot == "time":
        parts = b.pick([[(slot, value)], ["at", (slot, value)], ["around", (slot, value)]])
    elif slot == "date":
        parts = b.pick([[(slot, value)], [(slot, value), "please"], ["on", (slot, value)]])
    else:
        parts = b.pick([[(slot, value)], [(slot, value), "please"]])
    b.user(parts, intent, ["inform"])


def _ask_missing(b: _Builder, needed: list[str], have: set[str], intent: str) -> None:
    for slot in needed:
        if slot in have:
            continue
        b.system(b.pick(SLOT_QUESTIONS[slot]), ("request", slot))
        _answer(b, slot, intent)
        have.add(slot)


def _close(b: _Builder, intent: str, confirm_slots: list[str], success: str) -> None:
    slot = b.pick(confirm_slots)
    b.system(f"please confirm the {slot.replace('_', ' ')}", ("confirm", slot))
    if b.chance(0.2):
        b.user([b.pick(["no", "no thanks", "that is wrong"])], intent, ["negate"])
        b.system(b.pick(SLOT_QUESTIONS[slot]), ("request", slot))
        _answer(b, slot, intent)
        b.system("please confirm", ("confirm", slot))
    b.user([b.pick(["yes", "yes please", "sounds good", "correct"])], intent, ["affirm"])
    b.system(success, ("notify_success", None))
    if b.chance(0.6):
        b.user([b.pick(["thanks", "thank you", "great thanks"])], intent, ["thank_you"])


def _opening_prefix(b: _Builder) -> tuple[list, list[str]]:
    if b.chance(0.3):
        return [b.pick(["hi", "hello", "hey"])], ["greeting"]
    return [], []


def _reserve_dialogue(b: _Builder) -> None:
    intent = INTENT_RESERVE
    have: set[str] = set()
    prefix, acts = _opening_prefix(b)
    if b.chance(0.3):
        # entity-first opening: the value's identity is the only intent cue
        name = b.pick(RESTAURANTS)
        n = b.pick(BARE_NUMBERS[1:6])
        b.user(prefix + [("restaurant_name", name), "for", ("num_people", n)], intent, acts + ["inform"])
        have |= {"restaurant_name", "num_people"}
    else:
        parts = prefix + [b.pick(["i want to reserve a table", "book a table", "i need a table"])]
        if b.chance(0.6):
            parts += ["at", ("restaurant_name", b.pick(RESTAURANTS))]
            have.add("restaurant_name")
        if b.chance(0.3):
            parts += ["on", ("date", b.pick(DATES))]
            have.add("date")
        b.user(parts, intent, acts + ["inform"])
    _ask_missing(b, ["restaurant_name", "num_people", "date", "time"], have, intent)
    _close(b, intent, ["num_people", "time", "restaurant_name"], "your table is booked")


def _movie_dialogue(b: _Builder) -> None:
    intent = INTENT_BUY
    have: set[str] = set()
    prefix, acts = _opening_prefix(b)
    if b.chance(0.3):
        title = b.pick(MOVIES)
        n = b.pick(BARE_NUMBERS[1:6])
        b.user(prefix + [("movie", title), "for", ("num_tickets", n)], intent, acts + ["inform"])
        have |= {"movie", "num_tickets"}
    else:
        parts = prefix + [b.pick(["i want to buy tickets", "get me movie tickets", "i need tickets"])]
        if b.chance(0.6):
            parts += ["for", ("movie", b.pick(MOVIES))]
            have.add("movie")
        if b.chance(0.3):
            parts += ["at", ("theatre", b.pick(THEATRES))]
            have.add("theatre")
        b.user(parts, intent, acts + ["inform"])
    _ask_missing(b, ["movie", "theatre", "num_tickets", "time"], have, intent)
    _close(b, intent, ["num_tickets", "time", "movie"], "your tickets are booked")


def _find_dialogue(b: _Builder) -> None:
    intent = INTENT_FIND
    prefix, acts = _opening_prefix(b)
    parts = prefix + [b.pick(["find me a", "i am looking for a", "search for a"])]
    have = set()
    if b.chance(0.7):
        parts += [("cuisine", b.pick(CUISINES))]
        have.add("cuisine")
    parts += ["restaurant"]
    if b.chance(0.5):
        parts += ["in", ("location", b.pick(LOCATIONS))]
        have.add("location")
    b.user(parts, intent, acts + ["inform"])
    _ask_missing(b, ["cuisine", "location"], have, intent)
    for _ in range(int(b.rng.integers(1, 3))):
        name = b.pick(RESTAURANTS)
        b.system(f"how about {name}", ("offer", "restaurant_name"))
        if b.chance(0.5):
            break
        b.user([b.pick(["no", "not that one"]), b.pick(["anything else", "something else"])],
               intent, ["negate", "request_alts"])
    b.user([b.pick(["yes", "sounds good", "that works"])], intent, ["affirm"])
    b.system("anything else", ("reqmore", None))
    b.user([b.pick(["no thanks", "thanks", "that is all"])], intent, ["thank_you"])


def generate_dialogue(rng: np.random.Generator, index: int) -> tuple[Dialogue, int]:
    b = _Builder(rng)
    kind = rng.random()
    if kind < 0.4:
        _reserve_dialogue(b)
    elif kind < 0.8:
        _movie_dialogue(b)
    else:
        _find_dialogue(b)
    return Dialogue(f"dlg-{index:05d}", tuple(b.turns)), b.ambiguous


def generate_synthetic_corpus(seed: int, num_dialogues: int = 500) -> Corpus:
    """Deterministic-by-seed corpus of ``num_dialogues`` dialogues."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D1A]))
    dialogues = [generate_dialogue(rng, i)[0] for i in range(num_dialogues)]
    return Corpus.from_dialogues(dialogues)


def count_context_ambiguous(corpus: Corpus) -> int:
    """User turns made of a single bare number (slot type needs context)."""
    n = 0
    for d in corpus.dialogues:
        for t in d.turns:
            if t.speaker == USER and len(t.words) == 1 and t.words[0].isdigit():
                n += 1
    return n


_TEXT_TEMPLATES = [
    "{restaurant_name} serves great {cuisine} food in {location}",
    "we had dinner at {restaurant_name} on {date}",
    "the {cuisine} place {restaurant_name} opens at {time}",
    "{restaurant_name} is a popular {cuisine} restaurant",
    "my friends booked a table at {restaurant_name} for {number} people",
    "everyone says the food at {restaurant_name} is amazing",
    "the chef at {restaurant_name} cooks {cuisine} dishes",
    "we watched {movie} at {theatre} on {date}",
    "{movie} is playing at {theatre} at {time}",
    "the film {movie} won many awards",
    "critics loved {movie} this year",
    "{theatre} is showing {movie} tonight",
    "i bought {number} tickets for {movie}",
    "the director of {movie} made another film",
    "{location} has many good restaurants",
    "the weather in {location} was nice on {date}",
]


def generate_text_corpus(seed: int, num_documents: int = 300) -> list[list[str]]:
    """Plain-text documents (lists of sentences) for masked-LM pretraining.

    Entity names share the dialogue generator's inventories, so pretraining
    learns which words behave like restaurants, films or places.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E47]))
    docs = []
    for _ in range(num_documents):
        sentences = []
        for _ in range(int(rng.integers(3, 7))):
            template = _TEXT_TEMPLATES[int(rng.integers(len(_TEXT_TEMPLATES)))]
            values = {
                "restaurant_name": RESTAURANTS[int(rng.integers(len(RESTAURANTS)))],
                "movie": MOVIES[int(rng.integers(len(MOVIES)))],
                "theatre": THEATRES[int(rng.integers(len(THEATRES)))],
                "cuisine": CUISINES[int(rng.integers(len(CUISINES)))],
                "location": LOCATIONS[int(rng.integers(len(LOCATIONS)))],
                "date": DATES[int(rng.integers(len(DATES)))],
                "time": TIMES[int(rng.integers(len(TIMES)))],
                "number": NUMBER_WORDS[int(rng.integers(len(NUMBER_WORDS)))],
            }
            sentences.append(template.format(**values))
        docs.append(sentences)
    return docs


def corpus_text(corpus: Corpus) -> str:
    return "\n".join(t.utterance for d in corpus.dialogues for t in d.turns)
