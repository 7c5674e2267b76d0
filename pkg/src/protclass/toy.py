"""Synthetic corpora for demos and tests.

`markov_corpus` draws "real" sequences from a sparse first-order Markov chain
over residue codes: every code has a handful of allowed successors, so the
random fragments inserted by mutation negatives break the local grammar.
`write_pdbml` renders sequences as minimal PDBML documents.
"""

from __future__ import annotations

import gzip
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from .seq_core import ProteinSequence

RESIDUES = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
PDBML_NS = "http://pdbml.pdb.org/schema/pdbx-v50.xsd"


def markov_chain(codes: Sequence[str], successors: int, rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic transition matrix with `successors` non-zero entries per row."""
    n = len(codes)
    T = np.zeros((n, n))
    for i in range(n):
        nxt = rng.choice(n, size=successors, replace=False)
        T[i, nxt] = rng.dirichlet(np.full(successors, 2.0))
    return T


def markov_corpus(
    n: int,
    min_len: int,
    max_len: int,
    seed: int = 0,
    codes: Sequence[str] = RESIDUES,
    successors: int = 3,
) -> list[ProteinSequence]:
    rng = np.random.default_rng(seed)
    T = markov_chain(codes, successors, rng)
    cum = T.cumsum(axis=1)
    out = []
    for k in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        state = int(rng.integers(len(codes)))
        draws = rng.random(length)
        idx = []
        for u in draws:
            idx.append(state)
            state = min(int(np.searchsorted(cum[state], u, side="right")), len(codes) - 1)
        out.append(ProteinSequence(f"TOY{k:05d}_1", [codes[i] for i in idx]))
    return out


def corpus_with_lengths(lengths: Sequence[int], code: str = "ALA", prefix: str = "S") -> list[ProteinSequence]:
    """Homogeneous sequences with prescribed lengths (for length-statistics checks)."""
    return [ProteinSequence(f"{prefix}{i}_1", (code,) * n) for i, n in enumerate(lengths)]


def pdbml_document(
    block: str,
    entities: Sequence[tuple[str, Sequence[str]]],
    entity_types: dict[str, str] | None = None,
    poly_types: dict[str, str] | None = None,
) -> str:
    """Minimal PDBML text with entity, entity_poly and entity_poly_seq categories."""
    entity_types = entity_types or {}
    poly_types = poly_types or {}
    lines = ['<?xml version="1.0" encoding="UTF-8" ?>', f'<PDBx:datablock datablockName={quoteattr(block)} xmlns:PDBx="{PDBML_NS}">']
    lines.append("  <PDBx:entityCategory>")
    for ent, _ in entities:
        lines.append(f'    <PDBx:entity id={quoteattr(ent)}><PDBx:type>{entity_types.get(ent, "polymer")}</PDBx:type></PDBx:entity>')
    lines.append("  </PDBx:entityCategory>")
    lines.append("  <PDBx:entity_polyCategory>")
    for ent, _ in entities:
        lines.append(f'    <PDBx:entity_poly entity_id={quoteattr(ent)}><PDBx:type>{poly_types.get(ent, "polypeptide(L)")}</PDBx:type></PDBx:entity_poly>')
    lines.append("  </PDBx:entity_polyCategory>")
    lines.append("  <PDBx:entity_poly_seqCategory>")
    for ent, tokens in entities:
        for num, code in enumerate(tokens, 1):
            lines.append(
                f'    <PDBx:entity_poly_seq entity_id={quoteattr(ent)} mon_id="{code}" num="{num}"><PDBx:hetero>n</PDBx:hetero></PDBx:entity_poly_seq>'
            )
    lines.append("  </PDBx:entity_poly_seqCategory>")
    lines.append("</PDBx:datablock>")
    return "\n".join(lines) + "\n"


def write_pdbml(path, block: str, entities, gz: bool | None = None, **kw) -> Path:
    path = Path(path)
    data = pdbml_document(block, entities, **kw).encode("utf-8")
    if gz if gz is not None else path.name.endswith(".gz"):
        path.write_bytes(gzip.compress(data, mtime=0))
    else:
        path.write_bytes(data)
    return path


def main(argv=None) -> None:
    """Regenerate the bundled toy sequence table: python -m protclass.toy OUT.csv.gz"""
    import argparse

    from .pdbml import write_sequence_table

    parser = argparse.ArgumentParser(description=main.__doc__)
    parser.add_argument("output")
    parser.add_argument("-n", type=int, default=400)
    parser.add_argument("--min-len", type=int, default=20)
    parser.add_argument("--max-len", type=int, default=60)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    write_sequence_table(markov_corpus(args.n, args.min_len, args.max_len, args.seed), args.output)


if __name__ == "__main__":
    main()
