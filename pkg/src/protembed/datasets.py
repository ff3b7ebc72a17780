"""Training-dataset construction: grouped streams, interaction pairs, and
continuous-score rows, with the filters, sorts, and normalizations the
pipelines need, plus a synthetic generator for desk-scale runs.

All builders are deterministic functions of (input, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import make_rng
from .seqio import AMINO_ACIDS, EmbeddingSet, ScoredPair, SequenceRecord

DMS_DROP_PREFIXES = ("GB1_", "GFP_AEQVI_")


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class DmsRow:
    assay_id: str
    wild_type: str
    mutant: str
    raw_score: float | None = None
    clinical_label: str | None = None  # "Pathogenic" | "Benign"
    split_hint: str | None = None  # "train" | "test"

    def __post_init__(self):
        if (self.raw_score is None) == (self.clinical_label is None):
            raise ValueError("exactly one of raw_score / clinical_label required")
        if self.clinical_label is not None and self.clinical_label not in (
            "Pathogenic",
            "Benign",
        ):
            raise ValueError(f"unknown clinical label {self.clinical_label!r}")
        if self.split_hint is not None and self.split_hint not in ("train", "test"):
            raise ValueError(f"unknown split hint {self.split_hint!r}")


@dataclass(frozen=True)
class PpiEdge:
    id1: str
    id2: str
    combined_score: int


def apply_clan_map(
    records: list[SequenceRecord], clan_map: Mapping[str, str]
) -> list[SequenceRecord]:
    """Attach meta["clan_id"]; orphan families inherit their own family id."""
    out = []
    for rec in records:
        if rec.group_id is None:
            raise DatasetError(f"record {rec.id!r} has no group_id")
        meta = dict(rec.meta)
        meta["clan_id"] = clan_map.get(rec.group_id, rec.group_id)
        out.append(
            SequenceRecord(rec.id, rec.sequence, group_id=rec.group_id, meta=meta)
        )
    return out


def build_grouped_pairs(
    records: list[SequenceRecord],
    sort_keys: Sequence[str],
    preshuffle_seed: int | None = None,
) -> list[SequenceRecord]:
    """Drop singleton groups and emit the sorted grouped record stream.

    ``sort_keys`` entries are either "group_id" or meta keys. When
    ``preshuffle_seed`` is given the records are shuffled before the stable
    sort, so order within equal keys is the seeded shuffle order.
    """
    for rec in records:
        if rec.group_id is None:
            raise DatasetError(f"record {rec.id!r} has no group_id")
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.group_id] = counts.get(rec.group_id, 0) + 1
    kept = [r for r in records if counts[r.group_id] > 1]

    if preshuffle_seed is not None:
        rng = make_rng(preshuffle_seed)
        perm = rng.permutation(len(kept))
        kept = [kept[i] for i in perm]

    def key_of(rec: SequenceRecord):
        out = []
        for k in sort_keys:
            if k == "group_id":
                out.append(rec.group_id)
            elif k in rec.meta:
                out.append(rec.meta[k])
            else:
                raise DatasetError(f"record {rec.id!r} lacks sort key {k!r}")
        return tuple(out)

    return sorted(kept, key=key_of)


@dataclass
class FilterReport:
    kept: int = 0
    dropped_plddt: int = 0
    dropped_fragment: int = 0
    dropped_flag: int = 0


def filter_afdb(
    records: list[SequenceRecord],
    plddt_min: float = 70.0,
    keep_flags: frozenset[int] = frozenset({1, 2}),
) -> tuple[list[SequenceRecord], FilterReport]:
    """Keep confident, non-fragment rows and relabel by structural cluster.

    Requires meta keys plddt, fragment, clu_flag, and foldseek_rep; the
    group label becomes the Foldseek representative.
    """
    out = []
    report = FilterReport()
    for rec in records:
        try:
            plddt = float(rec.meta["plddt"])
            fragment = int(rec.meta["fragment"])
            flag = int(rec.meta["clu_flag"])
            rep = rec.meta["foldseek_rep"]
        except (KeyError, ValueError) as e:
            raise DatasetError(f"record {rec.id!r}: bad AFDB meta ({e})") from e
        if not plddt > plddt_min:
            report.dropped_plddt += 1
            continue
        if fragment != 0:
            report.dropped_fragment += 1
            continue
        if flag not in keep_flags:
            report.dropped_flag += 1
            continue
        report.kept += 1
        out.append(
            SequenceRecord(rec.id, rec.sequence, group_id=rep, meta=dict(rec.meta))
        )
    return out, report


@dataclass
class PpiReport:
    input_edges: int = 0
    dropped_score: int = 0
    dropped_missing: int = 0
    dropped_self_cluster: int = 0
    dropped_duplicate: int = 0
    dropped_length: int = 0
    kept: int = 0


def build_ppi_pairs(
    edges: Iterable[PpiEdge],
    cluster_map: Mapping[str, str],
    sequences: Mapping[str, str],
    min_score: int = 400,
    len_range: tuple[int, int] = (10, 1024),
    shuffle_seed: int = 42,
) -> tuple[list[tuple[str, str]], PpiReport]:
    """Score-filter, cluster-canonicalize, and deduplicate interaction edges.

    Surviving rows carry the endpoint sequences of the highest-scoring edge
    per unordered cluster pair, oriented by lexicographic representative
    order; ties at the same score keep the earliest input edge.
    """
    report = PpiReport()
    staged = []
    for n, edge in enumerate(edges):
        report.input_edges += 1
        if edge.combined_score < min_score:
            report.dropped_score += 1
            continue
        rep1 = cluster_map.get(edge.id1)
        rep2 = cluster_map.get(edge.id2)
        seq1 = sequences.get(edge.id1)
        seq2 = sequences.get(edge.id2)
        if rep1 is None or rep2 is None or seq1 is None or seq2 is None:
            report.dropped_missing += 1
            continue
        if rep1 == rep2:
            report.dropped_self_cluster += 1
            continue
        if rep1 > rep2:
            rep1, rep2, seq1, seq2 = rep2, rep1, seq2, seq1
        staged.append((-edge.combined_score, n, rep1, rep2, seq1, seq2))

    staged.sort(key=lambda t: (t[0], t[1]))
    seen: set[tuple[str, str]] = set()
    deduped = []
    for _, _, rep1, rep2, seq1, seq2 in staged:
        if (rep1, rep2) in seen:
            report.dropped_duplicate += 1
            continue
        seen.add((rep1, rep2))
        deduped.append((seq1, seq2))

    lo, hi = len_range
    pairs = []
    for seq1, seq2 in deduped:
        if lo <= len(seq1) <= hi and lo <= len(seq2) <= hi:
            pairs.append((seq1, seq2))
        else:
            report.dropped_length += 1
    report.kept = len(pairs)

    rng = make_rng(shuffle_seed)
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm], report


@dataclass
class DmsReport:
    input_rows: int = 0
    dropped_prefix_assays: list[str] = field(default_factory=list)
    skipped_assays: list[str] = field(default_factory=list)
    dropped_nonfinite: int = 0
    kept: int = 0


def normalize_dms(
    rows: Iterable[DmsRow],
    drop_prefixes: Sequence[str] = DMS_DROP_PREFIXES,
) -> tuple[list[ScoredPair], DmsReport]:
    """Map raw assay scores to [0, 1].

    Continuous rows are z-scored per assay (population std), clipped to
    [-3, 3], and rescaled as (z + 3) / 6, so the assay mean maps to 0.5
    exactly. Clinical rows map Pathogenic -> 0.0 and Benign -> 1.0. Assays
    with under two finite scores or zero spread are skipped; assays whose id
    starts with a drop prefix are removed. Split hints ride through as meta.
    """
    report = DmsReport()
    by_assay: dict[str, list[DmsRow]] = {}
    for row in rows:
        report.input_rows += 1
        by_assay.setdefault(row.assay_id, []).append(row)

    out: list[ScoredPair] = []
    for assay_id, assay_rows in by_assay.items():
        if any(assay_id.startswith(p) for p in drop_prefixes):
            report.dropped_prefix_assays.append(assay_id)
            continue
        continuous = [
            r
            for r in assay_rows
            if r.raw_score is not None and math.isfinite(r.raw_score)
        ]
        report.dropped_nonfinite += sum(
            1
            for r in assay_rows
            if r.raw_score is not None and not math.isfinite(r.raw_score)
        )
        mean = std = None
        if continuous:
            if len(continuous) < 2:
                report.skipped_assays.append(assay_id)
                continue
            values = np.array([r.raw_score for r in continuous], dtype=np.float64)
            mean = float(values.mean())
            std = float(values.std())  # population std
            if std == 0.0:
                report.skipped_assays.append(assay_id)
                continue
        for r in assay_rows:
            if r.clinical_label is not None:
                score = 0.0 if r.clinical_label == "Pathogenic" else 1.0
            elif math.isfinite(r.raw_score):
                z = (r.raw_score - mean) / std
                z = min(3.0, max(-3.0, z))
                score = (z + 3.0) / 6.0
            else:
                continue
            meta = {"split_hint": r.split_hint} if r.split_hint else {}
            out.append(
                ScoredPair(
                    seq1=r.wild_type,
                    seq2=r.mutant,
                    score=score,
                    assay_id=assay_id,
                    meta=meta,
                )
            )
    report.kept = len(out)
    return out, report


@dataclass
class SplitReport:
    dropped_hint: int = 0
    dropped_random: int = 0
    dropped_global: int = 0
    unsplit_groups: int = 0
    dropped_ids: list[tuple[str, str]] = field(default_factory=list)


def split_dms(
    rows: list[ScoredPair],
    seed: int = 42,
    test_frac: float = 0.2,
    min_group: int = 10,
) -> tuple[list[ScoredPair], SplitReport]:
    """Drop the held-out fold from scored rows, grouped by assay id.

    Groups with explicit split hints keep only non-test rows; unhinted
    groups of at least ``min_group`` rows lose a seeded ``test_frac`` fold
    (smaller groups are kept whole). Finally any retained row whose
    (seq1, seq2) string pair appears in a dropped row is removed globally.
    """
    report = SplitReport()
    by_group: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        by_group.setdefault(row.assay_id, []).append(i)

    dropped: set[int] = set()
    for group, idxs in by_group.items():
        hinted = any(rows[i].meta.get("split_hint") for i in idxs)
        if hinted:
            for i in idxs:
                if rows[i].meta.get("split_hint") == "test":
                    dropped.add(i)
                    report.dropped_hint += 1
        elif len(idxs) < min_group:
            report.unsplit_groups += 1
        else:
            rng = make_rng(seed, "dms-split", group)
            perm = rng.permutation(len(idxs))
            n_test = round(test_frac * len(idxs))
            for j in perm[:n_test]:
                dropped.add(idxs[int(j)])
                report.dropped_random += 1

    test_pairs = {(rows[i].seq1, rows[i].seq2) for i in dropped}
    train: list[ScoredPair] = []
    for i, row in enumerate(rows):
        if i in dropped:
            report.dropped_ids.append((row.seq1, row.seq2))
            continue
        if (row.seq1, row.seq2) in test_pairs:
            report.dropped_global += 1
            report.dropped_ids.append((row.seq1, row.seq2))
            continue
        train.append(row)
    return train, report


def shuffle_rows(rows: list, seed: int = 42) -> list:
    rng = make_rng(seed, "final-shuffle")
    perm = rng.permutation(len(rows))
    return [rows[i] for i in perm]


# -- synthetic generation -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_groups: int = 8
    members_per_group: int = 4
    dim: int = 16
    noise: float = 1.0
    seq_len: tuple[int, int] = (30, 60)
    group_prefix: str = "G"


def synth_records(spec: SyntheticSpec, rng: np.random.Generator) -> list[SequenceRecord]:
    records = []
    lo, hi = spec.seq_len
    for g in range(spec.n_groups):
        group = f"{spec.group_prefix}{g:04d}"
        for m in range(spec.members_per_group):
            length = int(rng.integers(lo, hi + 1))
            seq = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=length))
            records.append(
                SequenceRecord(id=f"{group}_{m:03d}", sequence=seq, group_id=group)
            )
    return records


def synth_embeddings(
    records: list[SequenceRecord],
    dim: int,
    noise: float,
    rng: np.random.Generator,
) -> EmbeddingSet:
    """Group-mean plus Gaussian-noise embeddings, row-normalized.

    Noise coordinates have variance noise^2 / dim so the perturbation norm is
    about ``noise`` regardless of dimension; noise 0 makes group members
    bit-identical.
    """
    groups = sorted({r.group_id for r in records})
    means = {}
    for g in groups:
        v = rng.standard_normal(dim)
        means[g] = v / np.linalg.norm(v)
    vectors = np.zeros((len(records), dim), dtype=np.float64)
    for i, rec in enumerate(records):
        v = means[rec.group_id]
        if noise > 0:
            v = v + noise * rng.standard_normal(dim) / math.sqrt(dim)
        vectors[i] = v / np.linalg.norm(v)
    return EmbeddingSet([r.id for r in records], vectors, normalized=True)


def synth_dms_rows(
    n_assays: int,
    rows_per_assay: int,
    rng: np.random.Generator,
    seq_len: int = 40,
) -> list[DmsRow]:
    rows = []
    for a in range(n_assays):
        wt = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=seq_len))
        for _ in range(rows_per_assay):
            pos = int(rng.integers(0, seq_len))
            sub = AMINO_ACIDS[int(rng.integers(0, 20))]
            mutant = wt[:pos] + sub + wt[pos + 1 :]
            rows.append(
                DmsRow(
                    assay_id=f"ASSAY_{a:03d}",
                    wild_type=wt,
                    mutant=mutant,
                    raw_score=float(rng.normal()),
                )
            )
    return rows
