import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from protclass.errors import DataError, SequenceTooLong, UnknownToken
from protclass.seq_core import (
    ProteinSequence,
    Vocabulary,
    build_vocabulary,
    decode,
    encode,
    reverse,
)

CODES = ["ALA", "ARG", "GLY", "SER", "MSE", "DA", "UNK", "A1"]
codes = st.sampled_from(CODES)
sequences = st.lists(codes, min_size=1, max_size=40).map(lambda t: ProteinSequence("X_1", t))


def seq(*tokens, ident="S_1"):
    return ProteinSequence(ident, tokens)


def test_empty_corpus_gives_empty_vocabulary():
    vocab = build_vocabulary([])
    assert len(vocab) == 0
    assert vocab.items() == []


def test_vocabulary_is_lexicographic():
    vocab = build_vocabulary([seq("GLY", "ALA")])
    assert vocab.items() == [("ALA", 1), ("GLY", 2)]


def test_vocabulary_of_23_codes():
    codes23 = [f"C{i:02d}" for i in range(23)]
    vocab = build_vocabulary([seq(*codes23[:10]), seq(*codes23[10:])])
    assert len(vocab) == 23
    assert sorted(i for _, i in vocab.items()) == list(range(1, 24))


def test_encode_pads_right():
    vocab = Vocabulary(["ALA", "GLY"])
    assert encode(seq("ALA", "GLY"), vocab, 5).tolist() == [1, 2, 0, 0, 0]


def test_empty_sequence_rejected():
    with pytest.raises(DataError):
        ProteinSequence("E_1", [])


def test_encode_too_long():
    vocab = Vocabulary(["ALA"])
    with pytest.raises(SequenceTooLong):
        encode(ProteinSequence("L_1", ["ALA"] * 1501), vocab, 1500)
    assert encode(ProteinSequence("L_1", ["ALA"] * 1500), vocab, 1500).min() == 1


def test_encode_unknown_token_names_code():
    with pytest.raises(UnknownToken, match="ZZZ"):
        encode(seq("ALA", "ZZZ"), Vocabulary(["ALA"]), 4)


def test_invalid_code_rejected():
    with pytest.raises(DataError):
        seq("ala")


@pytest.mark.parametrize(
    "tokens, expected",
    [(("ALA", "GLY", "SER"), ("SER", "GLY", "ALA")), (("ALA", "GLY", "ALA"), ("ALA", "GLY", "ALA"))],
)
def test_reverse(tokens, expected):
    r = reverse(seq(*tokens))
    assert r.tokens == expected
    assert r.id != "S_1"


def test_vocabulary_text_roundtrip(tmp_path):
    vocab = Vocabulary(["SER", "ALA", "GLY"])
    assert vocab.to_text() == "ALA\t1\nGLY\t2\nSER\t3\n"
    vocab.save(tmp_path / "v.tsv")
    assert Vocabulary.load(tmp_path / "v.tsv") == vocab


def test_vocabulary_text_rejects_gaps():
    with pytest.raises(DataError):
        Vocabulary.from_text("ALA\t1\nGLY\t3\n")


@given(sequences)
def test_encode_is_prefix_faithful(s):
    vocab = build_vocabulary([s])
    enc = encode(s, vocab, 50)
    assert decode(enc, vocab) == s.tokens
    assert np.all(enc[len(s):] == 0)
    assert enc.min() >= 0 and enc.max() <= len(vocab)


@given(sequences)
def test_reverse_is_involution(s):
    r = reverse(s)
    assert reverse(r).tokens == s.tokens
    assert len(r) == len(s)
    assert sorted(r.tokens) == sorted(s.tokens)


@given(st.lists(sequences, max_size=8), st.randoms())
def test_vocabulary_independent_of_order(corpus, rnd):
    shuffled = list(corpus)
    rnd.shuffle(shuffled)
    assert build_vocabulary(corpus) == build_vocabulary(shuffled)
