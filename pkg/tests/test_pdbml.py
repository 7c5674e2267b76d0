import gzip
import io

import pytest

from protclass.errors import GzipError, MalformedXml
from protclass.pdbml import (
    find_pdbml_files,
    ingest_corpus,
    parse_file,
    parse_pdbml,
    read_sequence_table,
    source_name,
    write_sequence_table,
)
from protclass.toy import pdbml_document, write_pdbml


def test_golden_minimal(data_dir):
    recs = parse_file(data_dir / "minimal.xml")
    assert len(recs) == 1
    assert recs[0].tokens == ("ALA", "GLY", "SER")
    assert recs[0].id == "minimal_1"


def test_no_sequence_category(data_dir):
    assert parse_file(data_dir / "no_sequence.xml") == []


def test_malformed_reports_offset(data_dir):
    with pytest.raises(MalformedXml) as info:
        parse_file(data_dir / "malformed.xml")
    assert info.value.offset >= 0


def test_truncated_gzip():
    blob = gzip.compress(pdbml_document("T", [("1", ["ALA"] * 50)]).encode())
    with pytest.raises(GzipError):
        parse_pdbml(blob[: len(blob) // 2], gzipped=True)


def test_entity_type_filtering():
    doc = pdbml_document(
        "F",
        [("1", ["ALA", "GLY"]), ("2", ["DA", "DT"]), ("3", ["HOH"])],
        entity_types={"3": "water"},
        poly_types={"2": "polydeoxyribonucleotide"},
    )
    recs = parse_pdbml(doc.encode(), source_file="F")
    assert [r.entity_id for r in recs] == ["1"]


def test_residue_order_and_heterogeneity():
    doc = b"""<?xml version="1.0"?>
<d xmlns="urn:x"><entity_poly_seqCategory>
<entity_poly_seq entity_id="1" mon_id="CYS" num="3"/>
<entity_poly_seq entity_id="1" mon_id="LEU" num="2"/>
<entity_poly_seq entity_id="1" mon_id="ILE" num="2"/>
<entity_poly_seq entity_id="1" mon_id="ASP" num="1"/>
</entity_poly_seqCategory></d>"""
    (rec,) = parse_pdbml(io.BytesIO(doc))
    assert rec.tokens == ("ASP", "LEU", "CYS")


def test_streaming_across_chunks():
    tokens = ["ALA", "GLY", "SER", "TRP"] * 5000
    doc = pdbml_document("BIG", [("1", tokens), ("2", tokens[:7])]).encode()
    assert len(doc) > 4 * (1 << 16)
    recs = parse_pdbml(io.BytesIO(doc))
    assert [len(r.tokens) for r in recs] == [len(tokens), 7]
    assert recs[0].tokens == tuple(tokens)


def test_source_name(tmp_path):
    assert source_name(tmp_path / "1abc-noatom.xml.gz") == "1abc-noatom"
    assert source_name(tmp_path / "1abc.xml") == "1abc"


def test_toy_directory(toy_dir, tmp_path):
    out = tmp_path / "t.csv.gz"
    report = ingest_corpus(toy_dir / "pdbml", out, jobs=1)
    assert report.files_seen == 4
    assert report.files_failed == 0
    recs = list(read_sequence_table(out))
    ids = [r.id for r in recs]
    assert ids == ["1toy-noatom_1", "2toy-noatom_1", "2toy-noatom_3", "3toy-noatom_1"]
    assert recs[3].tokens == ("ASP", "PHE", "CYS")
    assert report.sequences_emitted == 4


def _corpus(root, n_valid=2, malformed=True):
    root.mkdir()
    for i in range(n_valid):
        write_pdbml(root / f"{i}v.xml", f"V{i}", [("1", ["ALA", "GLY"][: i + 1])])
    if malformed:
        (root / "bad.xml").write_text("<a><b></a>")
    return root


def test_malformed_file_counted_not_fatal(tmp_path):
    root = _corpus(tmp_path / "in")
    report = ingest_corpus(root, tmp_path / "o.csv.gz", jobs=1)
    assert report.files_seen == 3
    assert report.files_failed == 1
    assert report.sequences_emitted == 2


def test_ingest_is_byte_identical(tmp_path):
    root = _corpus(tmp_path / "in")
    ingest_corpus(root, tmp_path / "a.csv.gz", jobs=1)
    ingest_corpus(root, tmp_path / "b.csv.gz", jobs=2)
    assert (tmp_path / "a.csv.gz").read_bytes() == (tmp_path / "b.csv.gz").read_bytes()


def test_table_roundtrip(data_dir, tmp_path):
    recs = parse_file(data_dir / "minimal.xml")
    write_sequence_table(recs, tmp_path / "m.csv.gz")
    assert list(read_sequence_table(tmp_path / "m.csv.gz")) == recs
    with gzip.open(tmp_path / "m.csv.gz", "rt") as fh:
        assert fh.read() == "id,tokens\nminimal_1,ALA-GLY-SER\n"


def test_find_files_sorted(tmp_path):
    root = _corpus(tmp_path / "in", n_valid=3, malformed=False)
    (root / "notes.txt").write_text("x")
    assert [p.name for p in find_pdbml_files(root)] == ["0v.xml", "1v.xml", "2v.xml"]
