"""Training-text composition and subword tokenization.

Tracks carry a bag of textual elements (tags, captions). At training time a
random subset is kept, shuffled and joined, so the model sees the same track
described many different ways. At evaluation time all elements are used in
their stored order. Texts are encoded against a small merge-based subword
vocabulary with a hard 77-token cap (begin/end markers included).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

MAX_TEXT_TOKENS = 77
_MAX_CONTENT = MAX_TEXT_TOKENS - 2  # minus begin/end markers

PAD_ID = 0
BEGIN_ID = 1
END_ID = 2
UNK_ID = 3
RESERVED = ["<pad>", "<s>", "</s>", "<unk>"]


class TextKind(Enum):
    TAG = "tag"
    CAPTION = "caption"


@dataclass(frozen=True)
class TextElement:
    kind: TextKind
    content: str

    def __post_init__(self):
        if not self.content.strip():
            raise ValueError("text element content must be non-empty")


@dataclass
class TextTokenIds:
    ids: list[int]
    length: int

    def __post_init__(self):
        if self.length > MAX_TEXT_TOKENS:
            raise ValueError(f"token length {self.length} exceeds {MAX_TEXT_TOKENS}")


class EmptyElements(ValueError):
    pass


def compose_with_dropout(
    elements: list[TextElement],
    rng: np.random.Generator,
    keep_prob: float = 0.5,
) -> str:
    """Randomly keep, shuffle and join text elements.

    Each element survives independently with `keep_prob`; if everything is
    dropped one element is rescued uniformly at random so the output is never
    empty. Kept elements are joined with ", " in shuffled order.
    """
    if not elements:
        raise EmptyElements("cannot compose text from zero elements")
    kept = [e for e in elements if rng.random() < keep_prob]
    if not kept:
        kept = [elements[rng.integers(len(elements))]]
    order = rng.permutation(len(kept))
    return ", ".join(kept[i].content for i in order)


def compose_eval_text(elements: list[TextElement]) -> str:
    """Deterministic evaluation text: every element, stored order, no dropout."""
    if not elements:
        raise EmptyElements("cannot compose text from zero elements")
    return ", ".join(e.content for e in elements)


class Vocab:
    """Subword vocabulary with reserved ids 0..3 (pad, begin, end, unk)."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def from_token_list(cls, id_to_token: list[str]) -> "Vocab":
        """Rebuild from a full id-ordered token list (reserved ids first)."""
        if id_to_token[: len(RESERVED)] != RESERVED:
            raise ValueError("token list missing reserved tokens")
        return cls(id_to_token[len(RESERVED):])

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        entries: list[tuple[str, int]] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, idx = line.rpartition("\t")
                entries.append((tok, int(idx)))
        entries.sort(key=lambda e: e[1])
        tokens = [tok for tok, _ in entries]
        if tokens[: len(RESERVED)] != RESERVED:
            raise ValueError("vocab file missing reserved tokens")
        return cls(tokens[len(RESERVED):])


def build_vocab(corpus_texts: list[str], size: int) -> Vocab:
    """Build a deterministic merge-based subword vocabulary.

    Starts from single characters and repeatedly merges the most frequent
    adjacent pair (ties broken lexicographically) until `size` total entries
    (reserved ones included) are reached or no pair occurs twice.
    """
    if not corpus_texts:
        raise ValueError("corpus must be non-empty")
    budget = max(0, size - len(RESERVED))

    words = Counter()
    for text in corpus_texts:
        words.update(text.split())

    char_freq = Counter()
    for word, n in words.items():
        for ch in word:
            char_freq[ch] += n
    chars = sorted(char_freq, key=lambda c: (-char_freq[c], c))[:budget]
    tokens = list(sorted(chars))

    if len(tokens) < budget:
        pieces = {w: tuple(w) for w in words}
        while len(tokens) < budget:
            pairs = Counter()
            for word, n in words.items():
                seq = pieces[word]
                for a, b in zip(seq, seq[1:]):
                    pairs[(a, b)] += n
            if not pairs:
                break
            best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
            (a, b), freq = best
            if freq < 2:
                break
            merged = a + b
            for word, seq in pieces.items():
                out, i = [], 0
                while i < len(seq):
                    if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                        out.append(merged)
                        i += 2
                    else:
                        out.append(seq[i])
                        i += 1
                pieces[word] = tuple(out)
            if merged not in tokens:
                tokens.append(merged)
    return Vocab(tokens)


def tokenize_text(text: str, vocab: Vocab) -> TextTokenIds:
    """Encode text as subword ids, capped at 77 tokens with begin/end markers.

    Each whitespace word is segmented by greedy longest-prefix match over the
    vocabulary; a maximal span with no match at all becomes a single UNK.
    """
    content: list[int] = []
    for word in text.split():
        i = 0
        unk_open = False
        while i < len(word) and len(content) < _MAX_CONTENT:
            match = None
            for j in range(len(word), i, -1):
                if word[i:j] in vocab:
                    match = word[i:j]
                    break
            if match is None:
                if not unk_open:
                    content.append(UNK_ID)
                    unk_open = True
                i += 1
            else:
                content.append(vocab.token_to_id[match])
                unk_open = False
                i += len(match)
        if len(content) >= _MAX_CONTENT:
            break
    ids = [BEGIN_ID] + content + [END_ID]
    return TextTokenIds(ids=ids, length=len(ids))


def decode_text(token_ids: TextTokenIds, vocab: Vocab) -> str:
    """Inverse of tokenize_text for texts whose words are single vocab units."""
    parts = [
        vocab.id_to_token[i]
        for i in token_ids.ids
        if i not in (PAD_ID, BEGIN_ID, END_ID)
    ]
    return " ".join(parts)
