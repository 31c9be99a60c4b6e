import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tribind.text import (
    BEGIN_ID,
    END_ID,
    MAX_TEXT_TOKENS,
    RESERVED,
    UNK_ID,
    EmptyElements,
    TextElement,
    TextKind,
    Vocab,
    build_vocab,
    compose_eval_text,
    compose_with_dropout,
    decode_text,
    tokenize_text,
)


def tags(*contents):
    return [TextElement(TextKind.TAG, c) for c in contents]


class TestComposeWithDropout:
    def test_single_element_always_kept(self, rng):
        elements = tags("calm piano")
        for _ in range(50):
            assert compose_with_dropout(elements, rng) == "calm piano"

    def test_keep_prob_one_is_permutation(self, rng):
        elements = tags("a", "b", "c")
        for _ in range(20):
            parts = compose_with_dropout(elements, rng, keep_prob=1.0).split(", ")
            assert sorted(parts) == ["a", "b", "c"]

    def test_empty_elements_raise(self, rng):
        with pytest.raises(EmptyElements):
            compose_with_dropout([], rng)

    def test_two_element_inclusion_rate(self):
        # keep + rescue mass: 0.5 + 0.25 * 0.5 = 0.625, checked within 5 sigma
        rng = np.random.default_rng(7)
        elements = tags("x", "y")
        draws = 100_000
        hits = sum("x" in compose_with_dropout(elements, rng).split(", ")
                   for _ in range(draws))
        p = 0.625
        sigma = (p * (1 - p) / draws) ** 0.5
        assert abs(hits / draws - p) < 5 * sigma

    @given(n=st.integers(1, 6), seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_output_is_nonempty_subset(self, n, seed):
        rng = np.random.default_rng(seed)
        elements = tags(*[f"tag{i}" for i in range(n)])
        parts = compose_with_dropout(elements, rng).split(", ")
        assert 1 <= len(parts) <= n
        assert set(parts) <= {e.content for e in elements}
        assert len(parts) == len(set(parts))

    def test_eval_text_is_deterministic_full_join(self):
        elements = tags("calm", "jazz")
        assert compose_eval_text(elements) == "calm, jazz"


class TestBuildVocab:
    def test_size_four_keeps_only_reserved(self):
        vocab = build_vocab(["some words here"], 4)
        assert vocab.id_to_token == RESERVED

    def test_merges_repeated_pair(self):
        vocab = build_vocab(["aa aa"], 10)
        assert "aa" in vocab

    def test_deterministic(self):
        corpus = ["jazz piano calm", "calm jazz", "upbeat piano"]
        assert build_vocab(corpus, 64) == build_vocab(corpus, 64)

    def test_budget_respected(self):
        vocab = build_vocab(["abcdefghij klmnop"], 12)
        assert len(vocab) <= 12

    def test_empty_corpus_raises(self):
        with pytest.raises(ValueError):
            build_vocab([], 10)

    def test_save_load_round_trip(self, tmp_path):
        vocab = build_vocab(["jazz piano calm waltz"], 48)
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        assert Vocab.load(path) == vocab


class TestTokenizeText:
    @pytest.fixture()
    def vocab(self):
        return build_vocab(["jazz jazz piano piano calm calm"], 64)

    def test_empty_string(self, vocab):
        out = tokenize_text("", vocab)
        assert out.ids == [BEGIN_ID, END_ID]
        assert out.length == 2

    def test_truncation_cap(self, vocab):
        out = tokenize_text("jazz " * 500, vocab)
        assert out.length == MAX_TEXT_TOKENS
        assert out.ids[0] == BEGIN_ID and out.ids[-1] == END_ID

    def test_known_words_map_to_single_ids(self, vocab):
        out = tokenize_text("jazz piano", vocab)
        assert out.ids == [
            BEGIN_ID,
            vocab.token_to_id["jazz"],
            vocab.token_to_id["piano"],
            END_ID,
        ]

    def test_unknown_span_collapses_to_unk(self):
        vocab = Vocab(["ab"])
        out = tokenize_text("ab QQQQ ab", vocab)
        ab = vocab.token_to_id["ab"]
        assert out.ids == [BEGIN_ID, ab, UNK_ID, ab, END_ID]

    def test_decode_identity_on_covered_text(self, vocab):
        text = "jazz piano calm"
        assert decode_text(tokenize_text(text, vocab), vocab) == text

    @given(words=st.lists(st.sampled_from(["jazz", "piano", "calm"]), min_size=0,
                          max_size=120))
    @settings(max_examples=40, deadline=None)
    def test_length_never_exceeds_cap(self, words, ):
        vocab = build_vocab(["jazz jazz piano piano calm calm"], 64)
        out = tokenize_text(" ".join(words), vocab)
        assert out.length <= MAX_TEXT_TOKENS
