"""Balanced real/fake dataset construction.

Real sequences are length-filtered and augmented with their reversals.
Negatives are one homopolymer per vocabulary code plus fragment-mutated copies
of the positives, so that both classes have exactly the same size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, LengthOutOfRange, OutputUnwritable, TooFewPositives
from .pdbml import open_gzip_text
from .seq_core import DEFAULT_MAX_LEN, ProteinSequence, Vocabulary, encode, reverse

# inclusive (lo, hi) chain-length intervals of the preliminary corpus analysis
LENGTH_BUCKETS: tuple[tuple[int, int], ...] = (
    (1, 9),
    (10, 99),
    (100, 999),
    (1000, 1500),
    (1501, 9999),
    (10000, 99999),
    (100000, 1000000),
)
MAX_SUPPORTED_LENGTH = LENGTH_BUCKETS[-1][1]

DATASET_HEADER = ("id", "label", "indices")
HOMOPOLYMER_PREFIX = "homo_"
MUTATION_SUFFIX = "~mut"


@dataclass(frozen=True)
class BuildConfig:
    max_len: int = DEFAULT_MAX_LEN
    mutation_frac_lo: float = 0.05
    mutation_frac_hi: float = 0.07
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mutation_frac_lo <= self.mutation_frac_hi < 1:
            raise ValueError("need 0 < mutation_frac_lo <= mutation_frac_hi < 1")
        if not 0 < self.train_ratio < 1:
            raise ValueError("train_ratio must lie in (0, 1)")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class LengthHistogram:
    buckets: tuple[tuple[int, int], ...] = LENGTH_BUCKETS
    counts: list[int] = field(default_factory=lambda: [0] * len(LENGTH_BUCKETS))

    @property
    def total(self) -> int:
        return sum(self.counts)

    def fractions(self) -> list[float]:
        total = self.total
        return [c / total if total else 0.0 for c in self.counts]

    def as_dict(self) -> dict[str, int]:
        return {f"{lo}-{hi}": c for (lo, hi), c in zip(self.buckets, self.counts)}


@dataclass
class LabeledDataset:
    """Encoded samples of one split. `indices` is (N, max_len), `labels` is (N,)."""

    ids: list[str]
    indices: np.ndarray
    labels: np.ndarray
    vocab: Vocabulary
    split_tag: str = "train"

    def __len__(self):
        return len(self.ids)

    @property
    def max_len(self) -> int:
        return self.indices.shape[1]

    @property
    def positives(self) -> int:
        return int(self.labels.sum())

    @property
    def negatives(self) -> int:
        return len(self) - self.positives

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(
            [self.ids[i] for i in rows], self.indices[rows], self.labels[rows], self.vocab, self.split_tag
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _length(seq) -> int:
    return seq if isinstance(seq, (int, np.integer)) else len(seq)


def length_histogram(seqs: Iterable[ProteinSequence | int]) -> LengthHistogram:
    """Count sequences (or bare lengths) per chain-length interval."""
    hist = LengthHistogram()
    uppers = [hi for _, hi in LENGTH_BUCKETS]
    for seq in seqs:
        n = _length(seq)
        if n < 1 or n > MAX_SUPPORTED_LENGTH:
            raise LengthOutOfRange(f"length {n} outside [1, {MAX_SUPPORTED_LENGTH}]")
        hist.counts[int(np.searchsorted(uppers, n))] += 1
    return hist


def filter_by_length(seqs: Iterable[ProteinSequence], max_len: int = DEFAULT_MAX_LEN) -> list[ProteinSequence]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return [s for s in seqs if len(s) <= max_len]


def augment_reverse(seqs: Sequence[ProteinSequence]) -> list[ProteinSequence]:
    """Originals followed by their reversals (palindromes are kept twice)."""
    seqs = list(seqs)
    return seqs + [reverse(s) for s in seqs]


def gen_homopolymer_negatives(vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> list[ProteinSequence]:
    return [ProteinSequence(HOMOPOLYMER_PREFIX + code, (code,) * max_len) for code in vocab.codes]


def sample_fragment(length: int, rng: np.random.Generator, lo: float = 0.05, hi: float = 0.07) -> tuple[int, int, float]:
    """Draw (start, fragment_length, fraction) for a mutation of a `length`-long sequence.

    fraction ~ U[lo, hi]; fragment_length = max(1, round-half-up(fraction * length));
    start ~ U{0, ..., length - fragment_length}.
    """
    u = float(rng.uniform(lo, hi))
    n = max(1, _round_half_up(u * length))
    n = min(n, length)
    start = int(rng.integers(0, length - n + 1))
    return start, n, u


def fragment_length_bounds(length: int, lo: float = 0.05, hi: float = 0.07) -> tuple[int, int]:
    """Smallest and largest fragment length `sample_fragment` can produce."""
    return (
        min(length, max(1, _round_half_up(lo * length))),
        min(length, max(1, _round_half_up(hi * length))),
    )


def gen_mutation_negative(
    seq: ProteinSequence,
    vocab: Vocabulary,
    rng: np.random.Generator,
    lo: float = 0.05,
    hi: float = 0.07,
    ident: str | None = None,
) -> ProteinSequence:
    """Replace one random contiguous fragment with codes drawn uniformly from `vocab`."""
    if len(vocab) == 0:
        raise DataError("cannot mutate with an empty vocabulary")
    start, n, _ = sample_fragment(len(seq), rng, lo, hi)
    fresh = rng.integers(0, len(vocab), size=n)
    codes = vocab.codes
    tokens = list(seq.tokens)
    tokens[start : start + n] = [codes[i] for i in fresh]
    return ProteinSequence(ident or seq.id + MUTATION_SUFFIX, tokens)


def build_balanced(
    reals: Sequence[ProteinSequence],
    vocab: Vocabulary,
    cfg: BuildConfig,
    rng: np.random.Generator,
) -> list[tuple[ProteinSequence, int]]:
    """All positives (label 1) plus exactly as many negatives (label 0).

    The negatives are the V homopolymers and |reals| - V mutated positives.
    Each mutation draws from its own generator seeded off `rng`, so samples
    can be produced independently of one another.
    """
    reals = list(reals)
    homos = gen_homopolymer_negatives(vocab, cfg.max_len)
    if len(reals) < len(homos):
        raise TooFewPositives(f"{len(reals)} positives but {len(homos)} homopolymer negatives")
    n_mut = len(reals) - len(homos)
    order = rng.permutation(len(reals))
    seeds = rng.integers(0, 2**63 - 1, size=n_mut, dtype=np.int64)
    negatives = list(homos)
    for k in range(n_mut):
        src = reals[order[k]]
        sub = np.random.default_rng(int(seeds[k]))
        negatives.append(
            gen_mutation_negative(
                src, vocab, sub, cfg.mutation_frac_lo, cfg.mutation_frac_hi, ident=f"{src.id}{MUTATION_SUFFIX}{k}"
            )
        )
    return [(s, 1) for s in reals] + [(s, 0) for s in negatives]


def split_and_encode(
    labeled: Sequence[tuple[ProteinSequence, int]],
    vocab: Vocabulary,
    cfg: BuildConfig,
    rng: np.random.Generator,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified shuffle-split into train/test, then encode to `cfg.max_len`.

    The train split gets round(train_ratio * N) samples, with the positive
    share chosen as round(train_ratio * positives).
    """
    n = len(labeled)
    pos = [i for i, (_, y) in enumerate(labeled) if y == 1]
    neg = [i for i, (_, y) in enumerate(labeled) if y == 0]
    n_train = _round_half_up(cfg.train_ratio * n)
    n_train_pos = min(len(pos), _round_half_up(cfg.train_ratio * len(pos)))
    n_train_neg = min(len(neg), max(0, n_train - n_train_pos))
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    train_rows = pos[:n_train_pos] + neg[:n_train_neg]
    test_rows = pos[n_train_pos:] + neg[n_train_neg:]
    train_rows = [train_rows[i] for i in rng.permutation(len(train_rows))]
    test_rows = [test_rows[i] for i in rng.permutation(len(test_rows))]
    return (
        _encode_rows(labeled, train_rows, vocab, cfg.max_len, "train"),
        _encode_rows(labeled, test_rows, vocab, cfg.max_len, "test"),
    )


def _encode_rows(labeled, rows, vocab, max_len, tag) -> LabeledDataset:
    indices = np.zeros((len(rows), max_len), dtype=np.int64)
    labels = np.zeros(len(rows), dtype=np.int64)
    ids = []
    for j, i in enumerate(rows):
        seq, y = labeled[i]
        indices[j] = encode(seq, vocab, max_len)
        labels[j] = y
        ids.append(seq.id)
    return LabeledDataset(ids, indices, labels, vocab, tag)


def write_dataset(ds: LabeledDataset, path) -> None:
    try:
        fh, closers = open_gzip_text(path, "w")
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {path}: {exc}") from exc
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for ident, y, row in zip(ds.ids, ds.labels, ds.indices):
            writer.writerow((ident, int(y), " ".join(map(str, row.tolist()))))
    finally:
        for obj in closers:
            obj.close()


def read_dataset(path, vocab: Vocabulary, split_tag: str | None = None) -> LabeledDataset:
    ids, labels, rows = [], [], []
    try:
        fh, closers = open_gzip_text(path, "r")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != DATASET_HEADER:
            raise DataError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != 3 or rec[1] not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: malformed row")
            ids.append(rec[0])
            labels.append(int(rec[1]))
            rows.append(np.array(rec[2].split(), dtype=np.int64))
    except (OSError, EOFError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    finally:
        for obj in closers:
            obj.close()
    if not rows:
        raise DataError(f"{path}: no samples")
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have different lengths")
    indices = np.stack(rows)
    if indices.min() < 0 or indices.max() > len(vocab):
        raise DataError(f"{path}: indices outside the vocabulary range [0, {len(vocab)}]")
    if split_tag is None:
        split_tag = "test" if "test" in str(path) else "train"
    return LabeledDataset(ids, indices, np.array(labels, dtype=np.int64), vocab, split_tag)


@dataclass
class BuildResult:
    train: LabeledDataset
    test: LabeledDataset
    vocab: Vocabulary
    histogram: LengthHistogram
    total: int
    retained: int
    positives: int
    negatives: int

    @property
    def retention(self) -> float:
        return self.retained / self.total if self.total else 0.0

    def stats(self) -> dict:
        return {
            "total_sequences": self.total,
            "retained": self.retained,
            "retention": round(self.retention, 4),
            "histogram": self.histogram.as_dict(),
            "vocab_size": len(self.vocab),
            "positives": self.positives,
            "negatives": self.negatives,
            "train": len(self.train),
            "test": len(self.test),
        }


def build_dataset(seqs: Iterable[ProteinSequence], cfg: BuildConfig) -> BuildResult:
    """Run the whole recipe: histogram, filter, vocabulary, augment, balance, split."""
    seqs = list(seqs)
    hist = length_histogram(seqs)
    kept = filter_by_length(seqs, cfg.max_len)
    if not kept:
        raise DataError(f"no sequence has length <= {cfg.max_len}")
    vocab = Vocabulary(c for s in seqs for c in s.tokens)
    reals = augment_reverse(kept)
    rng = np.random.default_rng(cfg.seed)
    labeled = build_balanced(reals, vocab, cfg, rng)
    train, test = split_and_encode(labeled, vocab, cfg, rng)
    n_pos = sum(y for _, y in labeled)
    return BuildResult(train, test, vocab, hist, len(seqs), len(kept), n_pos, len(labeled) - n_pos)
