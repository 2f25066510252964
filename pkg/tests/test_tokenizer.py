from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kg2text.errors import InvalidId, VocabTooSmall
from kg2text.tokenizer import (
    _PIECE_RE,
    BOS,
    EOS,
    N_BASE,
    N_SPECIALS,
    PAD,
    SPECIAL_TOKENS,
    SubwordVocab,
    train_bpe,
)


def slow_train(texts, n_merges):
    """Reference trainer: full pair recount each round, same tie-break."""
    piece_counts = Counter()
    for t in texts:
        for m in _PIECE_RE.finditer(t.encode("utf-8")):
            piece_counts[m.group()] += 1
    pieces = [([bytes([b]) for b in piece], c)
              for piece, c in sorted(piece_counts.items())]
    merges = []
    for _ in range(n_merges):
        pc = Counter()
        for syms, c in pieces:
            for pair in zip(syms, syms[1:]):
                pc[pair] += c
        live = {p: c for p, c in pc.items() if c >= 2}
        if not live:
            break
        best = min(live, key=lambda p: (-live[p], p[0], p[1]))
        merges.append(best)
        merged = best[0] + best[1]
        out_pieces = []
        for syms, c in pieces:
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            out_pieces.append((out, c))
        pieces = out_pieces
    return merges


class TestTraining:
    def test_single_merge_is_most_frequent_pair(self):
        vocab = train_bpe(["aaab aab"], N_BASE + 1)
        # (a, a) occurs 3 times across pieces, (a, b) twice, (" ", a) once
        assert vocab.merges == [(b"a", b"a")]

    def test_greedy_order_with_lexicographic_ties(self):
        # all of (" ", c), (a, b), (c, d) occur twice; byte order breaks ties
        vocab = train_bpe(["ab ab cd cd"], N_BASE + 10)
        assert vocab.merges == [(b" ", b"c"), (b" c", b"d"), (b"a", b"b")]

    def test_stops_when_no_pair_repeats(self):
        vocab = train_bpe(["ab ab cd cd"], N_BASE + 10)
        assert vocab.size == N_BASE + 3

    def test_vocab_too_small(self):
        for size in (0, 100, N_BASE - 1, N_BASE):
            with pytest.raises(VocabTooSmall):
                train_bpe(["some text"], size)
        train_bpe(["some text"], N_BASE + 1)

    def test_retraining_is_deterministic(self):
        texts = ["the cat sat on the mat", "a cat and a hat", "mats and cats"]
        a = train_bpe(texts, N_BASE + 30)
        b = train_bpe(texts, N_BASE + 30)
        assert a.merges == b.merges
        assert a == b

    def test_matches_slow_reference_on_random_corpora(self):
        rng = np.random.default_rng(13)
        alphabet = list("abcde ")
        for _ in range(20):
            texts = [
                "".join(rng.choice(alphabet, size=rng.integers(1, 30)))
                for _ in range(rng.integers(1, 6))
            ]
            n = int(rng.integers(1, 12))
            fast = train_bpe(texts, N_BASE + n)
            assert fast.merges == slow_train(texts, n)

    def test_merged_token_table(self):
        vocab = train_bpe(["ab ab cd cd"], N_BASE + 10)
        for k, (left, right) in enumerate(vocab.merges):
            assert vocab.token_bytes[N_BASE + k] == left + right


class TestEncodeDecode:
    def test_empty_string(self, tiny_vocab):
        assert tiny_vocab.encode("") == []
        assert tiny_vocab.decode([]) == ""

    def test_single_bytes_without_merges(self):
        vocab = SubwordVocab([])
        assert vocab.encode("ab") == [N_SPECIALS + ord("a"), N_SPECIALS + ord("b")]

    def test_merges_apply_in_training_order(self):
        vocab = SubwordVocab([(b"a", b"b"), (b"ab", b"c")])
        assert vocab.encode("abc") == [N_BASE + 1]

    def test_leftmost_greedy_within_piece(self):
        vocab = SubwordVocab([(b"a", b"a")])
        assert vocab.encode("aaa") == [N_BASE, N_SPECIALS + ord("a")]

    def test_plain_text_never_yields_special_ids(self, tiny_vocab):
        for text in ["bela rota is a vono", "<pad> <bos> <ent>", "x<sep>y"]:
            assert all(i >= N_SPECIALS for i in tiny_vocab.encode(text))

    def test_specials_decode_to_empty(self, tiny_vocab):
        assert tiny_vocab.decode([PAD, BOS, EOS]) == ""
        assert tiny_vocab.decode([BOS] + tiny_vocab.encode("hi") + [EOS]) == "hi"

    def test_invalid_id(self, tiny_vocab):
        with pytest.raises(InvalidId):
            tiny_vocab.decode([tiny_vocab.size])
        with pytest.raises(InvalidId):
            tiny_vocab.decode([-1])

    def test_round_trip_on_training_corpus(self, tiny_pairs, tiny_vocab):
        _, texts = tiny_pairs
        for t in texts:
            assert tiny_vocab.decode(tiny_vocab.encode(t)) == t

    def test_name_round_trip_with_compression(self):
        corpus = ["Moses Malone played center", "Moses Malone won the award",
                  "the career of Moses Malone"]
        vocab = train_bpe(corpus, N_BASE + 40)
        ids = vocab.encode("Moses Malone")
        assert vocab.decode(ids) == "Moses Malone"
        assert len(ids) < len("Moses Malone".encode("utf-8"))

    @given(st.text(max_size=60))
    @settings(max_examples=120, deadline=None)
    def test_arbitrary_unicode_round_trip(self, text):
        vocab = train_bpe(["shared prefix corpus with spaces"], N_BASE + 10)
        assert vocab.decode(vocab.encode(text)) == text

    def test_merges_never_cross_piece_boundary(self):
        texts = ["one two  three\tfour", "two three four", "  two three"]
        vocab = train_bpe(texts, N_BASE + 50)
        for tok in vocab.token_bytes[N_BASE:]:
            # every merged token must itself be a single piece
            assert _PIECE_RE.fullmatch(tok), tok

    def test_encode_cache_stable(self, tiny_vocab):
        text = "bela rota is a vono in mirel ."
        assert tiny_vocab.encode(text) == tiny_vocab.encode(text)


class TestSerialization:
    def test_text_round_trip(self, tiny_vocab):
        again = SubwordVocab.from_text(tiny_vocab.to_text())
        assert again == tiny_vocab
        assert again.token_bytes == tiny_vocab.token_bytes

    def test_file_round_trip(self, tiny_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        tiny_vocab.save(path)
        assert SubwordVocab.load(path) == tiny_vocab

    def test_bad_header_rejected(self):
        with pytest.raises(InvalidId):
            SubwordVocab.from_text("not a vocab file\n")
        with pytest.raises(InvalidId):
            SubwordVocab.from_text("")

    def test_specials_listed_in_text_form(self, tiny_vocab):
        text = tiny_vocab.to_text()
        for tok_id, name in enumerate(SPECIAL_TOKENS):
            assert f"special {name} {tok_id}" in text


def test_special_layout_frozen():
    assert SPECIAL_TOKENS == ("<pad>", "<bos>", "<eos>", "<ent>", "<triple>",
                              "<sep>", "<unk>")
    assert (PAD, BOS, EOS) == (0, 1, 2)
    assert N_SPECIALS == 7
    assert N_BASE == 263
