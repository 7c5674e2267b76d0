"""Sequence types, the monomer vocabulary and the encode/reverse primitives."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, SequenceTooLong, UnknownToken

PAD_INDEX = 0
DEFAULT_MAX_LEN = 1500
REVERSE_SUFFIX = "~rev"

_CODE_RE = re.compile(r"^[A-Z0-9]+$")


def is_valid_code(code: str) -> bool:
    return bool(_CODE_RE.match(code))


@dataclass(frozen=True)
class ProteinSequence:
    id: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 1:
            raise DataError(f"sequence {self.id!r} is empty")
        for code in set(self.tokens):
            if not is_valid_code(code):
                raise DataError(f"invalid monomer code {code!r} in sequence {self.id!r}")

    @property
    def length(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)


class Vocabulary:
    """Bijective map from monomer codes to indices 1..V; index 0 is padding.

    Indices follow lexicographic code order, so the result does not depend on
    the order in which a corpus is read.
    """

    pad_index = PAD_INDEX

    def __init__(self, codes: Iterable[str] = ()):
        codes = sorted(set(codes))
        for code in codes:
            if not is_valid_code(code):
                raise DataError(f"invalid monomer code {code!r}")
        self._codes = tuple(codes)
        self._index = {code: i + 1 for i, code in enumerate(self._codes)}

    @property
    def codes(self) -> tuple[str, ...]:
        return self._codes

    def __len__(self):
        return len(self._codes)

    def __contains__(self, code):
        return code in self._index

    def __iter__(self):
        return iter(self._codes)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._codes == other._codes

    def __hash__(self):
        return hash(self._codes)

    def __repr__(self):
        return f"Vocabulary(V={len(self)})"

    def index(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise UnknownToken(code) from None

    def code(self, index: int) -> str:
        if not 1 <= index <= len(self._codes):
            raise DataError(f"index {index} is not a token index (V={len(self)})")
        return self._codes[index - 1]

    def items(self) -> list[tuple[str, int]]:
        return [(code, i + 1) for i, code in enumerate(self._codes)]

    def to_text(self) -> str:
        return "".join(f"{code}\t{i}\n" for code, i in self.items())

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            try:
                code, idx = line.split("\t")
                pairs.append((code, int(idx)))
            except ValueError:
                raise DataError(f"vocabulary line {lineno}: expected CODE<TAB>INDEX") from None
        vocab = cls(code for code, _ in pairs)
        if sorted(pairs, key=lambda p: p[1]) != vocab.items():
            raise DataError("vocabulary indices are not 1..V in lexicographic code order")
        return vocab

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocabulary(corpus: Iterable[ProteinSequence]) -> Vocabulary:
    codes: set[str] = set()
    for seq in corpus:
        codes.update(seq.tokens)
    return Vocabulary(codes)


def encode(seq: ProteinSequence | Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Map tokens to indices and right-pad with zeros to `max_len`."""
    tokens = seq.tokens if isinstance(seq, ProteinSequence) else tuple(seq)
    if len(tokens) > max_len:
        name = seq.id if isinstance(seq, ProteinSequence) else "input"
        raise SequenceTooLong(f"{name} has length {len(tokens)} > {max_len}")
    out = np.zeros(max_len, dtype=np.int64)
    lookup = vocab._index
    for i, code in enumerate(tokens):
        idx = lookup.get(code)
        if idx is None:
            raise UnknownToken(code, seq.id if isinstance(seq, ProteinSequence) else None)
        out[i] = idx
    return out


def decode(indices: Sequence[int], vocab: Vocabulary) -> tuple[str, ...]:
    """Inverse of `encode` over the non-pad prefix."""
    out = []
    for idx in indices:
        if idx == PAD_INDEX:
            break
        out.append(vocab.code(int(idx)))
    return tuple(out)


def reverse(seq: ProteinSequence) -> ProteinSequence:
    return ProteinSequence(seq.id + REVERSE_SUFFIX, seq.tokens[::-1])
