import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protclass.dataset import (
    BuildConfig,
    augment_reverse,
    build_balanced,
    build_dataset,
    filter_by_length,
    fragment_length_bounds,
    gen_homopolymer_negatives,
    gen_mutation_negative,
    length_histogram,
    read_dataset,
    sample_fragment,
    split_and_encode,
    write_dataset,
)
from protclass.errors import LengthOutOfRange, TooFewPositives
from protclass.seq_core import ProteinSequence, Vocabulary
from protclass.toy import RESIDUES, corpus_with_lengths, markov_corpus

# chain-length census of the reference corpus, one representative length per bucket
TABLE_COUNTS = {5: 96, 50: 3149, 500: 83526, 1500: 9107, 5000: 9117, 50000: 127, 1000000: 1}
VOCAB23 = Vocabulary([f"C{i:02d}" for i in range(23)])


def table_lengths():
    return [n for n, c in TABLE_COUNTS.items() for _ in range(c)]


def test_histogram_examples():
    hist = length_histogram([1, 9, 10, 1500, 1501, 1_000_000])
    assert hist.counts == [2, 1, 0, 1, 1, 0, 1]
    with pytest.raises(LengthOutOfRange):
        length_histogram([0])
    with pytest.raises(LengthOutOfRange):
        length_histogram([1_000_001])


def test_histogram_reference_census():
    hist = length_histogram(table_lengths())
    assert hist.counts == [96, 3149, 83526, 9107, 9117, 127, 1]
    assert hist.total == 105_123


def test_filter_reference_retention():
    seqs = corpus_with_lengths([5, 1499, 1500, 1501, 5000])
    assert [len(s) for s in filter_by_length(seqs)] == [5, 1499, 1500]
    kept = sum(1 for n in table_lengths() if n <= 1500)
    assert kept == 95_878
    assert round(kept / 105_123, 4) == 0.9121


def test_augment_reverse_doubles():
    seqs = markov_corpus(10, 5, 9, seed=1)
    out = augment_reverse(seqs)
    assert len(out) == 20
    assert out[:10] == seqs
    assert all(b.tokens == a.tokens[::-1] for a, b in zip(seqs, out[10:]))


def test_homopolymers():
    homos = gen_homopolymer_negatives(Vocabulary(["ALA", "GLY"]), max_len=7)
    assert [(h.id, h.tokens) for h in homos] == [("homo_ALA", ("ALA",) * 7), ("homo_GLY", ("GLY",) * 7)]


@pytest.mark.parametrize("length, allowed", [(100, {5, 6, 7}), (10, {1}), (1, {1})])
def test_fragment_length_range(length, allowed):
    rng = np.random.default_rng(0)
    seen = {sample_fragment(length, rng)[1] for _ in range(2000)}
    assert seen <= allowed
    lo, hi = fragment_length_bounds(length)
    assert allowed == set(range(lo, hi + 1))


def test_fraction_is_uniform():
    rng = np.random.default_rng(11)
    u = np.array([sample_fragment(1000, rng)[2] for _ in range(20_000)])
    assert u.min() >= 0.05 and u.max() <= 0.07
    for q in (0.1, 0.25, 0.5, 0.75, 0.9):
        assert abs(np.quantile(u, q) - (0.05 + 0.02 * q)) < 0.005


def test_mutation_is_seeded():
    seq = markov_corpus(1, 200, 200, seed=4)[0]
    vocab = Vocabulary(RESIDUES)
    a = gen_mutation_negative(seq, vocab, np.random.default_rng(5))
    b = gen_mutation_negative(seq, vocab, np.random.default_rng(5))
    assert a == b
    assert a.id == seq.id + "~mut"


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**32 - 1))
def test_mutation_is_local(length, seed):
    seq = ProteinSequence("M_1", ("ALA",) * length)
    mut = gen_mutation_negative(seq, Vocabulary(["GLY", "SER"]), np.random.default_rng(seed))
    changed = [i for i, (a, b) in enumerate(zip(seq.tokens, mut.tokens)) if a != b]
    lo, hi = fragment_length_bounds(length)
    assert len(mut) == length
    assert changed and changed[-1] - changed[0] + 1 <= hi


def test_balanced_counts():
    reals = [ProteinSequence(f"R{i}_1", [VOCAB23.codes[i % 23]] * 30) for i in range(100)]
    labeled = build_balanced(reals, VOCAB23, BuildConfig(max_len=30), np.random.default_rng(0))
    negs = [s for s, y in labeled if y == 0]
    assert sum(y for _, y in labeled) == 100
    assert len(negs) == 100
    assert sum(s.id.startswith("homo_") for s in negs) == 23
    assert sum("~mut" in s.id for s in negs) == 77


def test_too_few_positives():
    reals = [ProteinSequence("R_1", ["C00"] * 5)] * 10
    with pytest.raises(TooFewPositives):
        build_balanced(reals, VOCAB23, BuildConfig(max_len=5), np.random.default_rng(0))


def _labeled(n_pos, n_neg):
    return [(ProteinSequence(f"P{i}_1", ["ALA"]), 1) for i in range(n_pos)] + [
        (ProteinSequence(f"N{i}_1", ["GLY"]), 0) for i in range(n_neg)
    ]


def test_split_sizes():
    vocab = Vocabulary(["ALA", "GLY"])
    tr, te = split_and_encode(_labeled(5, 5), vocab, BuildConfig(max_len=3), np.random.default_rng(0))
    assert (len(tr), len(te)) == (8, 2)
    assert (tr.positives, te.positives) == (4, 1)
    assert tr.indices.shape == (8, 3)


def test_split_is_deterministic():
    vocab = Vocabulary(["ALA", "GLY"])
    cfg = BuildConfig(max_len=2)
    a = split_and_encode(_labeled(40, 40), vocab, cfg, np.random.default_rng(3))
    b = split_and_encode(_labeled(40, 40), vocab, cfg, np.random.default_rng(3))
    assert a[0].ids == b[0].ids and a[1].ids == b[1].ids


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 1000))
def test_split_is_stratified_partition(n_pos, n_neg, seed):
    vocab = Vocabulary(["ALA", "GLY"])
    labeled = _labeled(n_pos, n_neg)
    tr, te = split_and_encode(labeled, vocab, BuildConfig(max_len=1), np.random.default_rng(seed))
    assert sorted(tr.ids + te.ids) == sorted(s.id for s, _ in labeled)
    n = n_pos + n_neg
    assert len(tr) == int(np.floor(0.8 * n + 0.5))
    share = n_pos / n
    if len(tr) >= 100:
        assert abs(tr.positives / len(tr) - share) <= 0.01 + 1 / len(tr)


def test_dataset_roundtrip(tmp_path):
    res = build_dataset(markov_corpus(30, 5, 12, seed=2), BuildConfig(max_len=12, seed=9))
    write_dataset(res.train, tmp_path / "train.csv.gz")
    back = read_dataset(tmp_path / "train.csv.gz", res.vocab)
    assert back.ids == res.train.ids
    assert np.array_equal(back.indices, res.train.indices)
    assert np.array_equal(back.labels, res.train.labels)


def test_build_dataset_is_deterministic(tmp_path):
    seqs = markov_corpus(40, 5, 15, seed=2)
    for name in ("a", "b"):
        res = build_dataset(seqs, BuildConfig(max_len=15, seed=4))
        write_dataset(res.train, tmp_path / f"{name}.csv.gz")
    assert (tmp_path / "a.csv.gz").read_bytes() == (tmp_path / "b.csv.gz").read_bytes()


def test_build_dataset_balance_and_bounds():
    seqs = markov_corpus(60, 5, 30, seed=3) + corpus_with_lengths([31, 40], code="ALA", prefix="LONG")
    res = build_dataset(seqs, BuildConfig(max_len=30, seed=0))
    assert res.retained == 60
    assert res.positives == res.negatives == 120
    for ds in (res.train, res.test):
        assert ds.indices.min() >= 0 and ds.indices.max() <= len(res.vocab)
        assert ds.indices.shape[1] == 30
