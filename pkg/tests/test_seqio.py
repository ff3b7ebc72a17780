import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protembed.seqio import (
    AMINO_ACIDS,
    EmbeddingBadMagic,
    EmbeddingIdMismatch,
    EmbeddingSet,
    EmbeddingTruncated,
    FastaParseError,
    PairExample,
    PairSchemaError,
    ScoredPair,
    SequenceRecord,
    SequenceValidationError,
    parse_fasta,
    read_embeddings,
    read_pairs,
    read_scored,
    validate_sequence,
    write_embeddings,
    write_fasta,
    write_pairs,
    write_scored,
)
from protembed.rng import make_rng


class TestParseFasta:
    def test_basic(self):
        recs = parse_fasta(b">a\nACD\n>b\nWY\n")
        assert [(r.id, r.sequence) for r in recs] == [("a", "ACD"), ("b", "WY")]

    def test_uppercase_multiline_desc(self):
        recs = parse_fasta(b">a desc\nac\ndw\n")
        assert recs == [SequenceRecord(id="a", sequence="ACDW", meta={"desc": "desc"})]

    def test_terminal_stop_stripped(self):
        assert parse_fasta(b">a\nACD*\n")[0].sequence == "ACD"

    def test_sequence_before_header(self):
        with pytest.raises(FastaParseError) as e:
            parse_fasta(b"ACD\n>a\nWY\n")
        assert e.value.line == 1

    def test_duplicate_id(self):
        with pytest.raises(FastaParseError) as e:
            parse_fasta(b">a\nACD\n>a\nWY\n")
        assert e.value.line == 3

    def test_empty_sequence(self):
        with pytest.raises(FastaParseError):
            parse_fasta(b">a\n>b\nWY\n")

    def test_bad_character_reports_line(self):
        with pytest.raises(FastaParseError) as e:
            parse_fasta(b">a\nAC1D\n")
        assert "position 2" in str(e.value)

    def test_round_trip_1000_records_bit_identical(self):
        rng = make_rng(11)
        records = []
        for i in range(1000):
            n = int(rng.integers(1, 200))
            seq = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=n))
            meta = {"desc": f"synthetic record {i}"} if i % 3 == 0 else {}
            records.append(SequenceRecord(id=f"r{i:04d}", sequence=seq, meta=meta))
        buf1 = io.StringIO()
        write_fasta(records, buf1)
        parsed = parse_fasta(buf1.getvalue())
        assert parsed == records
        buf2 = io.StringIO()
        write_fasta(parsed, buf2)
        assert buf1.getvalue() == buf2.getvalue()


class TestValidateSequence:
    def test_uppercases(self):
        assert validate_sequence("acdw", False) == "ACDW"

    def test_rejects_x(self):
        with pytest.raises(SequenceValidationError) as e:
            validate_sequence("ACXD", False)
        assert e.value.position == 2
        assert e.value.char == "X"

    def test_allows_x(self):
        assert validate_sequence("ACXD", True) == "ACXD"


class TestPemb:
    def test_empty_set_round_trips(self):
        es = EmbeddingSet([], np.zeros((0, 16), dtype=np.float32))
        buf = io.BytesIO()
        write_embeddings(es, buf)
        buf.seek(0)
        out = read_embeddings(buf)
        assert out.ids == [] and out.dim == 16 and len(out) == 0

    def test_golden_byte_layout(self):
        # hand-assembled expectation, independent of the writer
        matrix = np.array(
            [[1.0, 2.0, 3.0, 4.0], [0.5, -0.5, 0.25, -0.25], [0.0, 1.5, -2.5, 8.0]],
            dtype=np.float32,
        )
        es = EmbeddingSet(["aa", "b", "ccc"], matrix, normalized=False)
        buf = io.BytesIO()
        write_embeddings(es, buf)

        expected = b"PEMB1\x00"
        expected += struct.pack("<I", 1)  # version
        expected += struct.pack("<I", 4)  # dim
        expected += struct.pack("<Q", 3)  # count
        expected += bytes([0, 0])  # normalized, dtype f32
        for sid in ("aa", "b", "ccc"):
            expected += struct.pack("<H", len(sid)) + sid.encode()
        for row in matrix:
            for v in row:
                expected += struct.pack("<f", v)
        assert buf.getvalue() == expected

    def test_round_trip_bit_exact(self):
        rng = make_rng(3)
        matrix = rng.standard_normal((17, 5)).astype(np.float32) * 1e3
        es = EmbeddingSet([f"id{i}" for i in range(17)], matrix)
        buf = io.BytesIO()
        write_embeddings(es, buf)
        buf.seek(0)
        out = read_embeddings(buf)
        assert out.ids == es.ids
        assert out.matrix.tobytes() == matrix.tobytes()
        assert out.normalized is False

    def test_normalized_flag_round_trips(self):
        v = np.array([[0.6, 0.8], [1.0, 0.0]], dtype=np.float32)
        es = EmbeddingSet(["a", "b"], v, normalized=True)
        buf = io.BytesIO()
        write_embeddings(es, buf)
        buf.seek(0)
        assert read_embeddings(buf).normalized is True

    def test_bad_magic(self):
        with pytest.raises(EmbeddingBadMagic):
            read_embeddings(io.BytesIO(b"XEMB1\x00" + b"\x00" * 32))

    def test_truncated_payload(self):
        es = EmbeddingSet(["a", "b"], np.ones((2, 3), dtype=np.float32))
        buf = io.BytesIO()
        write_embeddings(es, buf)
        blob = buf.getvalue()
        with pytest.raises(EmbeddingTruncated):
            read_embeddings(io.BytesIO(blob[:-5]))

    def test_id_count_mismatch(self):
        with pytest.raises(EmbeddingIdMismatch):
            EmbeddingSet(["a"], np.ones((2, 3), dtype=np.float32))
        with pytest.raises(EmbeddingIdMismatch):
            EmbeddingSet(["a", "a"], np.ones((2, 3), dtype=np.float32))

    def test_normalized_invariant_enforced(self):
        with pytest.raises(ValueError):
            EmbeddingSet(["a"], np.array([[3.0, 4.0]], dtype=np.float32), normalized=True)

    def test_multibyte_ids_round_trip(self):
        # the id block length prefix counts UTF-8 bytes, not characters
        ids = ["plain", "βγ-subunit", "タンパク質"]
        es = EmbeddingSet(ids, np.ones((3, 2), dtype=np.float32))
        buf = io.BytesIO()
        write_embeddings(es, buf)
        buf.seek(0)
        assert read_embeddings(buf).ids == ids

    @given(
        n=st.integers(0, 12),
        d=st.integers(1, 9),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, n, d, seed):
        rng = make_rng(seed)
        matrix = (
            rng.standard_normal((n, d)) * 10.0 ** float(rng.integers(-6, 7))
        ).astype(np.float32)
        es = EmbeddingSet([f"s{i}" for i in range(n)], matrix)
        buf = io.BytesIO()
        write_embeddings(es, buf)
        buf.seek(0)
        out = read_embeddings(buf)
        assert out.matrix.tobytes() == matrix.tobytes()
        assert out.ids == es.ids


class TestPairsJsonl:
    def test_pair_schema(self):
        rows = '{"anchor":"AAA","positive":"BBB","group":"PF1"}\n'
        out = list(read_pairs(io.StringIO(rows)))
        assert out == [PairExample(anchor="AAA", positive="BBB", group="PF1")]
        assert out[0].hard_negative is None

    def test_score_out_of_range_rejected(self):
        rows = '{"seq1":"A","seq2":"B","score":1.2,"assay_id":"x"}\n'
        with pytest.raises(PairSchemaError) as e:
            list(read_scored(io.StringIO(rows)))
        assert e.value.line == 1

    def test_unknown_keys_preserved(self):
        rows = '{"anchor":"A","positive":"B","group":"g","extra":7}\n'
        out = list(read_pairs(io.StringIO(rows)))
        assert out[0].meta == {"extra": 7}

    def test_missing_key_reports_line(self):
        rows = '{"anchor":"A","positive":"B","group":"g"}\n{"anchor":"A"}\n'
        with pytest.raises(PairSchemaError) as e:
            list(read_pairs(io.StringIO(rows)))
        assert e.value.line == 2

    def test_hard_negative_must_differ_from_anchor(self):
        with pytest.raises(ValueError):
            PairExample(anchor="AAA", positive="BBB", group="g", hard_negative="AAA")

    def test_10k_row_round_trip(self):
        rng = make_rng(9)
        pairs = []
        for i in range(10_000):
            pairs.append(
                PairExample(
                    anchor=f"A{i}",
                    positive=f"P{i}",
                    group=f"g{i % 50}",
                    hard_negative=f"H{i}" if i % 2 == 0 else None,
                    meta={"w": float(rng.random())} if i % 5 == 0 else {},
                )
            )
        buf = io.StringIO()
        write_pairs(pairs, buf)
        buf.seek(0)
        assert list(read_pairs(buf)) == pairs

    def test_scored_round_trip(self):
        rows = [
            ScoredPair(seq1="AC", seq2="AD", score=0.25, assay_id="a1"),
            ScoredPair(seq1="WW", seq2="WY", score=1.0, assay_id="a2", meta={"k": "v"}),
        ]
        buf = io.StringIO()
        write_scored(rows, buf)
        buf.seek(0)
        assert list(read_scored(buf)) == rows

    def test_invalid_json_reports_line(self):
        with pytest.raises(PairSchemaError) as e:
            list(read_pairs(io.StringIO('{"anchor":"A","positive":"B","group":"g"}\nnot json\n')))
        assert e.value.line == 2
