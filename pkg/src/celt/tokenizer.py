"""WordPiece-format subword tokenizer with a pair-merge vocabulary learner."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

PAD, UNK, CLS, SEP, EOU, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOU]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, EOU, MASK)
CONTINUATION = "##"
MAX_WORD_CHARS = 64


class VocabError(ValueError):
    pass


class Vocab:
    """Bijective token/id mapping whose first six ids are the special tokens."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabError(f"vocabulary must start with {SPECIAL_TOKENS}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabError(f"duplicate token {tok!r} at lines {index[tok]} and {i}")
            index[tok] = i
        self.id_to_token = tokens
        self.token_to_id = index

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __getitem__(self, token: str) -> int:
        return self.token_to_id[token]

    def get(self, token: str, default=None):
        return self.token_to_id.get(token, default)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    @property
    def eou_id(self) -> int:
        return self.token_to_id[EOU]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def to_text(self) -> str:
        return "".join(tok + "\n" for tok in self.id_to_token)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class TokenizedUtterance:
    ids: tuple[int, ...]
    word_starts: tuple[int, ...]


def _word_symbols(word: str) -> tuple[str, ...]:
    return (word[0],) + tuple(CONTINUATION + c for c in word[1:])


def _merge_symbols(left: str, right: str) -> str:
    return left + right[len(CONTINUATION):]


def build_vocab(corpus_text: str, target_size: int) -> Vocab:
    """Learn a vocabulary of at most ``target_size`` pieces from raw text.

    Starts from every character seen (word-initial characters bare,
    non-initial ones with the ``##`` prefix) and repeatedly merges the most
    frequent adjacent symbol pair. Ties are broken lexicographically so the
    result is deterministic.
    """
    words = Counter(w for w in corpus_text.lower().split() if len(w) <= MAX_WORD_CHARS)
    if not words:
        raise VocabError("cannot build a vocabulary from an empty corpus")

    splits = {w: _word_symbols(w) for w in words}
    alphabet = sorted({s for symbols in splits.values() for s in symbols})
    floor = len(SPECIAL_TOKENS) + len(alphabet)
    if target_size <= floor:
        raise VocabError(
            f"target_size {target_size} must exceed specials + alphabet ({floor})"
        )

    tokens = list(SPECIAL_TOKENS) + alphabet
    known = set(tokens)
    while len(tokens) < target_size:
        pairs: Counter = Counter()
        for w, symbols in splits.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += words[w]
        if not pairs:
            break
        best_count = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == best_count)
        merged = _merge_symbols(*best)
        for w, symbols in splits.items():
            if len(symbols) < 2:
                continue
            out, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            splits[w] = tuple(out)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tokens)


def tokenize_word(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first segmentation of one lowercased word."""
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            candidate = word[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def encode_utterance(text: str, vocab: Vocab) -> TokenizedUtterance:
    ids: list[int] = []
    starts: list[int] = []
    for word in text.lower().split():
        starts.append(len(ids))
        ids.extend(vocab[p] for p in tokenize_word(word, vocab))
    return TokenizedUtterance(tuple(ids), tuple(starts))


def detokenize_word(pieces) -> str:
    return "".join(p[len(CONTINUATION):] if p.startswith(CONTINUATION) else p for p in pieces)
