"""Streaming extraction of polymer sequences from PDBML (XML) files.

Each file is read incrementally with a pull parser and per-residue rows are
discarded as soon as they are consumed, so memory stays proportional to the
largest entity rather than to the file or corpus.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator
from xml.etree import ElementTree as ET

from .errors import DataError, GzipError, MalformedXml, OutputUnwritable
from .seq_core import ProteinSequence, is_valid_code

log = logging.getLogger(__name__)

CHUNK_SIZE = 1 << 16
TABLE_HEADER = ("id", "tokens")
TOKEN_SEP = "-"

# a million-residue chain is ~4 MB of text in one field, far above csv's default cap
csv.field_size_limit(2**31 - 1)


@dataclass(frozen=True)
class PdbmlSchema:
    """Element and attribute names, matched on local name (namespace ignored)."""

    residue_tag: str = "entity_poly_seq"
    entity_attr: str = "entity_id"
    monomer_attr: str = "mon_id"
    number_attr: str = "num"
    entity_tag: str = "entity"
    entity_id_attr: str = "id"
    poly_tag: str = "entity_poly"
    type_tag: str = "type"
    polymer_types: tuple[str, ...] = ("polymer",)
    peptide_prefix: str = "polypeptide"


DEFAULT_SCHEMA = PdbmlSchema()


@dataclass(frozen=True)
class IngestRecord:
    source_file: str
    entity_id: str
    tokens: tuple[str, ...]

    @property
    def id(self) -> str:
        return f"{self.source_file}_{self.entity_id}"

    def to_sequence(self) -> ProteinSequence:
        return ProteinSequence(self.id, self.tokens)


@dataclass
class IngestReport:
    files_seen: int = 0
    files_failed: int = 0
    sequences_emitted: int = 0
    distinct_codes: int = 0
    failures: list[str] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "files_seen": self.files_seen,
            "files_failed": self.files_failed,
            "sequences_emitted": self.sequences_emitted,
            "distinct_codes": self.distinct_codes,
        }


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child_text(elem, name: str) -> str | None:
    for child in elem:
        if _local(child.tag) == name:
            return (child.text or "").strip()
    return None


def _iter_chunks(content: BinaryIO | bytes, gzipped: bool) -> Iterator[bytes]:
    stream = io.BytesIO(content) if isinstance(content, (bytes, bytearray)) else content
    if gzipped:
        stream = gzip.GzipFile(fileobj=stream, mode="rb")
    try:
        while True:
            chunk = stream.read(CHUNK_SIZE)
            if not chunk:
                return
            yield chunk
    except (EOFError, gzip.BadGzipFile, zlib.error, OSError) as exc:
        raise GzipError(f"corrupt gzip stream: {exc}") from exc


def parse_pdbml(
    content: BinaryIO | bytes,
    gzipped: bool = False,
    source_file: str = "",
    schema: PdbmlSchema = DEFAULT_SCHEMA,
) -> list[IngestRecord]:
    """Extract one record per peptide polymer entity that lists residues.

    Residues are ordered by their sequence number; when several monomers share
    a number (micro-heterogeneity) the first listed one is kept.
    """
    parser = ET.XMLPullParser(events=("start", "end"))
    residues: dict[str, dict[int, str]] = {}
    entity_type: dict[str, str] = {}
    poly_type: dict[str, str] = {}
    stack: list = []
    offset = 0

    def handle(event, elem):
        if event == "start":
            stack.append(elem)
            return
        stack.pop()
        name = _local(elem.tag)
        if name == schema.residue_tag:
            attrs = elem.attrib
            ent = attrs.get(schema.entity_attr)
            mon = attrs.get(schema.monomer_attr)
            num = attrs.get(schema.number_attr)
            if ent is None or mon is None or num is None:
                raise MalformedXml(f"{schema.residue_tag} row without entity/monomer/number", offset)
            mon = mon.strip().upper()
            if not is_valid_code(mon):
                raise DataError(f"invalid monomer code {mon!r} in entity {ent}")
            try:
                n = int(num)
            except ValueError:
                raise MalformedXml(f"non-integer residue number {num!r}", offset) from None
            residues.setdefault(ent, {}).setdefault(n, mon)
        elif name == schema.entity_tag:
            ent = elem.attrib.get(schema.entity_id_attr)
            kind = _child_text(elem, schema.type_tag)
            if ent is not None and kind is not None:
                entity_type[ent] = kind
        elif name == schema.poly_tag:
            ent = elem.attrib.get(schema.entity_attr)
            kind = _child_text(elem, schema.type_tag)
            if ent is not None and kind is not None:
                poly_type[ent] = kind
        # datablock > category > row: discard each finished row
        if len(stack) == 2:
            stack[-1].remove(elem)
            elem.clear()

    try:
        for chunk in _iter_chunks(content, gzipped):
            parser.feed(chunk)
            offset += len(chunk)
            for event, elem in parser.read_events():
                handle(event, elem)
        parser.close()
        for event, elem in parser.read_events():
            handle(event, elem)
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedXml(f"XML error at line {line}, column {col}", offset) from None

    records = []
    for ent in sorted(residues):
        kind = entity_type.get(ent)
        if kind is not None and kind.lower() not in schema.polymer_types:
            continue
        ptype = poly_type.get(ent)
        if ptype is not None and not ptype.lower().startswith(schema.peptide_prefix):
            continue
        rows = residues[ent]
        if not rows:
            continue
        tokens = tuple(rows[n] for n in sorted(rows))
        records.append(IngestRecord(source_file, ent, tokens))
    return records


def source_name(path: Path) -> str:
    name = path.name
    for suffix in (".xml.gz", ".xml"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def find_pdbml_files(input_dir) -> list[Path]:
    root = Path(input_dir)
    if not root.is_dir():
        raise DataError(f"input directory {root} does not exist")
    files = [p for p in root.rglob("*") if p.is_file() and p.name.endswith((".xml", ".xml.gz"))]
    return sorted(files, key=lambda p: (source_name(p), str(p)))


def parse_file(path, schema: PdbmlSchema = DEFAULT_SCHEMA) -> list[IngestRecord]:
    path = Path(path)
    with open(path, "rb") as fh:
        return parse_pdbml(fh, gzipped=path.name.endswith(".gz"), source_file=source_name(path), schema=schema)


def _parse_worker(args):
    path, schema = args
    try:
        return parse_file(path, schema), None
    except (DataError, OSError) as exc:
        return [], f"{path}: {exc}"


def open_gzip_text(path, mode: str):
    if mode == "w":
        raw = open(path, "wb")
        # fixed header fields so identical input gives byte-identical output
        gz = gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0)
        text = io.TextIOWrapper(gz, encoding="utf-8", newline="")
        return text, (text, gz, raw)
    text = io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return text, (text,)


class TableWriter:
    """Serialized writer for the gzip CSV sequence table."""

    def __init__(self, path):
        try:
            self._fh, self._closers = open_gzip_text(path, "w")
        except OSError as exc:
            raise OutputUnwritable(f"cannot write {path}: {exc}") from exc
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(TABLE_HEADER)

    def write(self, record: IngestRecord | ProteinSequence):
        self._csv.writerow((record.id, TOKEN_SEP.join(record.tokens)))

    def close(self):
        for obj in self._closers:
            obj.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_sequence_table(records: Iterable[IngestRecord | ProteinSequence], path) -> int:
    n = 0
    with TableWriter(path) as writer:
        for rec in records:
            writer.write(rec)
            n += 1
    return n


def read_sequence_table(path) -> Iterator[IngestRecord]:
    """Yield records from a sequence table written by `ingest_corpus`."""
    try:
        fh, closers = open_gzip_text(path, "r")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TABLE_HEADER:
            raise DataError(f"{path}: expected header {','.join(TABLE_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            ident, joined = row
            source, _, entity = ident.rpartition("_")
            yield IngestRecord(source, entity, tuple(joined.split(TOKEN_SEP)) if joined else ())
    except (OSError, EOFError, zlib.error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    finally:
        for obj in closers:
            obj.close()


def read_sequences(path) -> Iterator[ProteinSequence]:
    for rec in read_sequence_table(path):
        yield rec.to_sequence()


def ingest_corpus(input_dir, output, jobs: int | None = None, schema: PdbmlSchema = DEFAULT_SCHEMA) -> IngestReport:
    """Parse every .xml / .xml.gz under `input_dir` into one sequence table.

    Unreadable or malformed files are logged and counted, never fatal.
    """
    files = find_pdbml_files(input_dir)
    report = IngestReport(files_seen=len(files))
    codes: set[str] = set()
    jobs = jobs or os.cpu_count() or 1
    work = [(p, schema) for p in files]

    with TableWriter(output) as writer:
        if jobs > 1 and len(files) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = pool.map(_parse_worker, work, chunksize=16)
                _consume(results, writer, report, codes)
        else:
            _consume(map(_parse_worker, work), writer, report, codes)
    report.distinct_codes = len(codes)
    return report


def _consume(results, writer, report, codes):
    for records, error in results:
        if error is not None:
            report.files_failed += 1
            report.failures.append(error)
            log.warning("skipping %s", error)
            continue
        for rec in records:
            writer.write(rec)
            codes.update(rec.tokens)
            report.sequences_emitted += 1
