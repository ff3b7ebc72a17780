"""Sequence, pair-dataset, and embedding I/O.

File formats:

* FASTA for sequences. The first header token is the record id, the rest of
  the header becomes ``meta["desc"]``.
* JSONL for pair datasets: one object per line, either anchor/positive rows
  (keys ``anchor``, ``positive``, ``hard_negative``, ``group``) or scored
  rows (keys ``seq1``, ``seq2``, ``score``, ``assay_id``). Unknown keys are
  preserved in ``meta``.
* PEMB1 for embeddings, a little-endian binary layout::

      magic "PEMB1\\0" (6 bytes)
      u32 version = 1
      u32 dim
      u64 count
      u8  normalized flag
      u8  dtype (0 = float32)
      id block:   count x (u16 byte-length + UTF-8 bytes)
      data block: count x dim float32, row-major

On-disk floats are 32-bit; training code upcasts to float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
_AA_SET = frozenset(AMINO_ACIDS)
_AAX_SET = frozenset(AMINO_ACIDS + "X")

PEMB_MAGIC = b"PEMB1\x00"
PEMB_VERSION = 1

FASTA_WIDTH = 60


class SeqIOError(Exception):
    """Base error for this module."""


class FastaParseError(SeqIOError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SequenceValidationError(SeqIOError):
    def __init__(self, message: str, position: int, char: str):
        super().__init__(message)
        self.position = position
        self.char = char


class PairSchemaError(SeqIOError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmbeddingFormatError(SeqIOError):
    """Base error for PEMB1 files."""


class EmbeddingBadMagic(EmbeddingFormatError):
    pass


class EmbeddingTruncated(EmbeddingFormatError):
    pass


class EmbeddingIdMismatch(EmbeddingFormatError):
    pass


@dataclass(frozen=True)
class SequenceRecord:
    """An identified amino-acid sequence with optional group label."""

    id: str
    sequence: str
    group_id: str | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sequence)


@dataclass(frozen=True)
class PairExample:
    anchor: str
    positive: str
    group: str
    hard_negative: str | None = None
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.hard_negative is not None and self.hard_negative == self.anchor:
            raise ValueError("hard_negative must differ from anchor")


@dataclass(frozen=True)
class ScoredPair:
    seq1: str
    seq2: str
    score: float
    assay_id: str
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


class EmbeddingSet:
    """Aligned ids and an n x d float matrix.

    The matrix is stored as float32 (the on-disk precision); consumers doing
    gradient work upcast to float64.
    """

    def __init__(self, ids: list[str], matrix: np.ndarray, normalized: bool = False):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-dimensional")
        if len(ids) != matrix.shape[0]:
            raise EmbeddingIdMismatch(
                f"{len(ids)} ids for {matrix.shape[0]} matrix rows"
            )
        if len(set(ids)) != len(ids):
            raise EmbeddingIdMismatch("duplicate ids")
        if normalized and matrix.shape[0] > 0:
            norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > 1e-5
            if bad.any():
                i = int(np.argmax(bad))
                raise ValueError(
                    f"normalized flag set but row {i} has L2 norm {norms[i]!r}"
                )
        self.ids = list(ids)
        self.matrix = matrix
        self.normalized = normalized
        self._index: dict[str, int] | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def row_index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {sid: i for i, sid in enumerate(self.ids)}
        return self._index


def validate_sequence(s: str, allow_x: bool = False) -> str:
    """Uppercase and check against the 20 standard residues (plus X if allowed)."""
    out = s.upper()
    allowed = _AAX_SET if allow_x else _AA_SET
    for pos, ch in enumerate(out):
        if ch not in allowed:
            raise SequenceValidationError(
                f"disallowed character {ch!r} at position {pos}", pos, ch
            )
    return out


def _open_maybe(path_or_handle, mode: str):
    if isinstance(path_or_handle, (str, Path)):
        return open(path_or_handle, mode), True
    return path_or_handle, False


def parse_fasta(source: bytes | str | IO, allow_x: bool = True) -> list[SequenceRecord]:
    """Parse FASTA into records, in file order.

    Sequences are uppercased; a single terminal '*' stop is stripped.
    Characters outside the alphabet, sequence data before any header,
    duplicate ids, and empty sequences are errors carrying a line number.
    """
    if isinstance(source, bytes):
        lines = source.decode("utf-8").splitlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    else:
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        lines = data.splitlines()

    records: list[SequenceRecord] = []
    seen: set[str] = set()
    header: tuple[str, str, int] | None = None  # id, desc, line
    chunks: list[str] = []

    def flush(end_line: int):
        nonlocal header, chunks
        if header is None:
            return
        rid, desc, hline = header
        seq = "".join(chunks)
        if seq.endswith("*"):
            seq = seq[:-1]
        if not seq:
            raise FastaParseError(f"record {rid!r} has an empty sequence", hline)
        try:
            seq = validate_sequence(seq, allow_x=allow_x)
        except SequenceValidationError as e:
            raise FastaParseError(f"record {rid!r}: {e}", hline) from e
        meta = {"desc": desc} if desc else {}
        records.append(SequenceRecord(id=rid, sequence=seq, meta=meta))
        header = None
        chunks = []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush(lineno)
            parts = line[1:].split(None, 1)
            if not parts:
                raise FastaParseError("empty header", lineno)
            rid = parts[0]
            if rid in seen:
                raise FastaParseError(f"duplicate id {rid!r}", lineno)
            seen.add(rid)
            header = (rid, parts[1].strip() if len(parts) > 1 else "", lineno)
        else:
            if header is None:
                raise FastaParseError("sequence data before any header", lineno)
            chunks.append(line)
    flush(len(lines) + 1)
    return records


def write_fasta(records: Iterable[SequenceRecord], dest, width: int = FASTA_WIDTH) -> None:
    handle, close = _open_maybe(dest, "w")
    try:
        for rec in records:
            desc = rec.meta.get("desc", "")
            handle.write(f">{rec.id} {desc}\n" if desc else f">{rec.id}\n")
            for i in range(0, len(rec.sequence), width):
                handle.write(rec.sequence[i : i + width] + "\n")
    finally:
        if close:
            handle.close()


# -- PEMB1 ------------------------------------------------------------------


def write_embeddings(es: EmbeddingSet, dest) -> None:
    handle, close = _open_maybe(dest, "wb")
    try:
        n, d = es.matrix.shape
        header = PEMB_MAGIC
        header += np.uint32(PEMB_VERSION).tobytes()
        header += np.uint32(d).tobytes()
        header += np.uint64(n).tobytes()
        header += bytes([1 if es.normalized else 0, 0])
        handle.write(header)
        for sid in es.ids:
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise EmbeddingIdMismatch(f"id too long: {sid[:32]!r}...")
            handle.write(np.uint16(len(raw)).tobytes())
            handle.write(raw)
        handle.write(np.ascontiguousarray(es.matrix, dtype="<f4").tobytes())
    finally:
        if close:
            handle.close()


def read_embeddings(source) -> EmbeddingSet:
    handle, close = _open_maybe(source, "rb")
    try:
        blob = handle.read()
    finally:
        if close:
            handle.close()

    def take(off: int, n: int, what: str) -> bytes:
        if off + n > len(blob):
            raise EmbeddingTruncated(
                f"truncated while reading {what} at byte {off} "
                f"(need {n}, have {len(blob) - off})"
            )
        return blob[off : off + n]

    if take(0, 6, "magic") != PEMB_MAGIC:
        raise EmbeddingBadMagic("not a PEMB1 file")
    version = int(np.frombuffer(take(6, 4, "version"), "<u4")[0])
    if version != PEMB_VERSION:
        raise EmbeddingFormatError(f"unsupported version {version}")
    dim = int(np.frombuffer(take(10, 4, "dim"), "<u4")[0])
    count = int(np.frombuffer(take(14, 8, "count"), "<u8")[0])
    normalized = take(22, 1, "flags")[0]
    dtype = take(23, 1, "flags")[0]
    if normalized not in (0, 1):
        raise EmbeddingFormatError(f"bad normalized flag {normalized}")
    if dtype != 0:
        raise EmbeddingFormatError(f"unsupported dtype code {dtype}")

    off = 24
    ids: list[str] = []
    for i in range(count):
        ln = int(np.frombuffer(take(off, 2, f"id {i} length"), "<u2")[0])
        off += 2
        ids.append(take(off, ln, f"id {i}").decode("utf-8"))
        off += ln
    data = take(off, count * dim * 4, "data block")
    off += count * dim * 4
    if off != len(blob):
        raise EmbeddingFormatError(f"{len(blob) - off} trailing bytes at byte {off}")
    matrix = np.frombuffer(data, "<f4").reshape(count, dim).copy()
    return EmbeddingSet(ids, matrix, normalized=bool(normalized))


# -- pair / scored JSONL ------------------------------------------------------

_PAIR_KEYS = {"anchor", "positive", "hard_negative", "group"}
_SCORED_KEYS = {"seq1", "seq2", "score", "assay_id"}


def read_pairs(source) -> Iterator[PairExample]:
    """Stream PairExample rows from JSONL; constant memory per record."""
    handle, close = _open_maybe(source, "r")
    try:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise PairSchemaError(f"invalid JSON: {e.msg}", lineno) from e
            if not isinstance(obj, dict):
                raise PairSchemaError("row is not an object", lineno)
            missing = {"anchor", "positive", "group"} - obj.keys()
            if missing:
                raise PairSchemaError(f"missing keys {sorted(missing)}", lineno)
            for key in ("anchor", "positive", "group"):
                if not isinstance(obj[key], str):
                    raise PairSchemaError(f"{key} must be a string", lineno)
            hn = obj.get("hard_negative")
            if hn is not None and not isinstance(hn, str):
                raise PairSchemaError("hard_negative must be a string or null", lineno)
            meta = {k: v for k, v in obj.items() if k not in _PAIR_KEYS}
            try:
                yield PairExample(
                    anchor=obj["anchor"],
                    positive=obj["positive"],
                    group=obj["group"],
                    hard_negative=hn,
                    meta=meta,
                )
            except ValueError as e:
                raise PairSchemaError(str(e), lineno) from e
    finally:
        if close:
            handle.close()


def write_pairs(pairs: Iterable[PairExample], dest) -> None:
    handle, close = _open_maybe(dest, "w")
    try:
        for p in pairs:
            row: dict[str, object] = {
                "anchor": p.anchor,
                "positive": p.positive,
                "hard_negative": p.hard_negative,
                "group": p.group,
            }
            row.update(p.meta)
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if close:
            handle.close()


def read_scored(source) -> Iterator[ScoredPair]:
    handle, close = _open_maybe(source, "r")
    try:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise PairSchemaError(f"invalid JSON: {e.msg}", lineno) from e
            if not isinstance(obj, dict):
                raise PairSchemaError("row is not an object", lineno)
            missing = _SCORED_KEYS - obj.keys()
            if missing:
                raise PairSchemaError(f"missing keys {sorted(missing)}", lineno)
            if not isinstance(obj["score"], (int, float)) or isinstance(obj["score"], bool):
                raise PairSchemaError("score must be a number", lineno)
            meta = {k: v for k, v in obj.items() if k not in _SCORED_KEYS}
            try:
                yield ScoredPair(
                    seq1=obj["seq1"],
                    seq2=obj["seq2"],
                    score=float(obj["score"]),
                    assay_id=obj["assay_id"],
                    meta=meta,
                )
            except ValueError as e:
                raise PairSchemaError(str(e), lineno) from e
    finally:
        if close:
            handle.close()


def write_scored(pairs: Iterable[ScoredPair], dest) -> None:
    handle, close = _open_maybe(dest, "w")
    try:
        for p in pairs:
            row: dict[str, object] = {
                "seq1": p.seq1,
                "seq2": p.seq2,
                "score": p.score,
                "assay_id": p.assay_id,
            }
            row.update(p.meta)
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if close:
            handle.close()


# -- record JSONL (id + sequence + group + meta) ------------------------------


def write_records(records: Iterable[SequenceRecord], dest) -> None:
    """Grouped-record JSONL used by the prep pipelines."""
    handle, close = _open_maybe(dest, "w")
    try:
        for rec in records:
            row: dict[str, object] = {"id": rec.id, "sequence": rec.sequence}
            if rec.group_id is not None:
                row["group_id"] = rec.group_id
            if rec.meta:
                row["meta"] = dict(sorted(rec.meta.items()))
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if close:
            handle.close()


def read_records(source) -> list[SequenceRecord]:
    handle, close = _open_maybe(source, "r")
    try:
        out = []
        seen: set[str] = set()
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise PairSchemaError(f"invalid JSON: {e.msg}", lineno) from e
            if "id" not in obj or "sequence" not in obj:
                raise PairSchemaError("missing id/sequence", lineno)
            if obj["id"] in seen:
                raise PairSchemaError(f"duplicate id {obj['id']!r}", lineno)
            seen.add(obj["id"])
            out.append(
                SequenceRecord(
                    id=obj["id"],
                    sequence=obj["sequence"],
                    group_id=obj.get("group_id"),
                    meta=dict(obj.get("meta", {})),
                )
            )
        return out
    finally:
        if close:
            handle.close()
