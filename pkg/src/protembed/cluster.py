"""Greedy identity clustering, deduplication, and train/test decontamination.

Identity between two sequences is the match count of an optimal global
alignment with unit match score and zero mismatch/gap penalties (i.e. the
longest common subsequence), divided by the shorter length. Coverage is the
span from the first to the last matched position of the shorter sequence,
under a canonical traceback (diagonal preferred, then up, then left),
divided by the shorter length.

Clustering is greedy: records are processed longest-first (ties by id) and
each joins the earliest representative meeting both thresholds, else opens
a new cluster. A shared-6-mer prefilter can skip candidate representatives
for speed; every accepted assignment is still threshold-checked, so the
prefilter can never produce a below-threshold membership.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seqio import SequenceRecord

PREFILTER_KMER = 6
PREFILTER_AUTO_THRESHOLD = 10_000

TEST_ID_PREFIX = "test::"


@dataclass(frozen=True)
class ClusterAssignment:
    member_id: str
    rep_id: str
    identity: float
    coverage: float


@dataclass
class RemovalReport:
    removed_ids: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.removed_ids)


def _lcs_table(a: str, b: str) -> np.ndarray:
    """DP table of LCS lengths; rows vectorized with a prefix-max recurrence."""
    la, lb = len(a), len(b)
    table = np.zeros((la + 1, lb + 1), dtype=np.int32)
    b_arr = np.frombuffer(b.encode("ascii"), dtype=np.uint8)
    for i in range(1, la + 1):
        prev = table[i - 1]
        match = (b_arr == ord(a[i - 1])).astype(np.int32)
        cand = np.maximum(prev[1:], prev[:-1] + match)
        table[i, 1:] = np.maximum.accumulate(cand)
    return table


def _traceback_matches(a: str, b: str, table: np.ndarray) -> list[tuple[int, int]]:
    """Canonical alignment traceback; returns matched (i, j) position pairs."""
    out = []
    i, j = len(a), len(b)
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1] and table[i, j] == table[i - 1, j - 1] + 1:
            out.append((i - 1, j - 1))
            i -= 1
            j -= 1
        elif table[i, j] == table[i - 1, j]:
            i -= 1
        else:
            j -= 1
    out.reverse()
    return out


def pairwise_identity(a: str, b: str) -> tuple[float, float]:
    """(identity, coverage) of two sequences; identity is symmetric."""
    if not a or not b:
        raise ValueError("sequences must be non-empty")
    table = _lcs_table(a, b)
    matches = int(table[-1, -1])
    shorter = min(len(a), len(b))
    identity = matches / shorter
    if matches == 0:
        return identity, 0.0
    pairs = _traceback_matches(a, b, table)
    axis = 0 if len(a) <= len(b) else 1
    positions = [p[axis] for p in pairs]
    coverage = (positions[-1] - positions[0] + 1) / shorter
    return identity, coverage


def _kmers(seq: str, k: int = PREFILTER_KMER) -> set[str]:
    return {seq[i : i + k] for i in range(len(seq) - k + 1)}


def greedy_cluster(
    records: list[SequenceRecord],
    min_id: float,
    min_cov: float,
    prefilter: bool | None = None,
) -> list[ClusterAssignment]:
    """Cluster records greedily; assignments are in processing order.

    ``prefilter=None`` enables the 6-mer prefilter above 10k records.
    """
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate record ids")
    if prefilter is None:
        prefilter = len(records) > PREFILTER_AUTO_THRESHOLD

    order = sorted(records, key=lambda r: (-len(r.sequence), r.id))
    reps: list[SequenceRecord] = []
    kmer_index: dict[str, set[int]] = {}
    out: list[ClusterAssignment] = []

    for rec in order:
        if prefilter:
            kmers = _kmers(rec.sequence)
            if kmers:
                cand = set()
                for km in kmers:
                    cand |= kmer_index.get(km, set())
                candidates = sorted(cand)
            else:
                candidates = range(len(reps))  # too short for the prefilter
        else:
            candidates = range(len(reps))

        assigned = False
        for ci in candidates:
            rep = reps[ci]
            identity, coverage = pairwise_identity(rec.sequence, rep.sequence)
            if identity >= min_id and coverage >= min_cov:
                out.append(ClusterAssignment(rec.id, rep.id, identity, coverage))
                assigned = True
                break
        if not assigned:
            idx = len(reps)
            reps.append(rec)
            if prefilter:
                for km in _kmers(rec.sequence):
                    kmer_index.setdefault(km, set()).add(idx)
            out.append(ClusterAssignment(rec.id, rec.id, 1.0, 1.0))
    return out


def drop_cross_group(
    assignments: list[ClusterAssignment], records: list[SequenceRecord]
) -> list[SequenceRecord]:
    """Drop members whose representative carries a different group label."""
    by_id = {r.id: r for r in records}
    for rec in records:
        if rec.group_id is None:
            raise ValueError(f"record {rec.id!r} has no group_id")
    keep: set[str] = set()
    for asg in assignments:
        member = by_id[asg.member_id]
        rep = by_id[asg.rep_id]
        if member.group_id == rep.group_id:
            keep.add(asg.member_id)
    return [r for r in records if r.id in keep]


def decontaminate(
    train: list[SequenceRecord],
    test: list[SequenceRecord],
    min_id: float = 0.5,
    min_cov: float = 0.8,
    prefilter: bool | None = None,
) -> tuple[list[SequenceRecord], RemovalReport]:
    """Remove train records sharing an identity cluster with any test record.

    Test ids are prefixed before the union clustering so collisions with
    train ids are impossible.
    """
    prefixed = [
        SequenceRecord(
            id=TEST_ID_PREFIX + r.id, sequence=r.sequence, group_id=r.group_id,
            meta=dict(r.meta),
        )
        for r in test
    ]
    union = list(train) + prefixed
    assignments = greedy_cluster(union, min_id, min_cov, prefilter=prefilter)
    members_by_rep: dict[str, list[str]] = {}
    for asg in assignments:
        members_by_rep.setdefault(asg.rep_id, []).append(asg.member_id)
    contaminated: set[str] = set()
    for rep_id, member_ids in members_by_rep.items():
        if any(m.startswith(TEST_ID_PREFIX) for m in member_ids):
            contaminated.update(m for m in member_ids if not m.startswith(TEST_ID_PREFIX))
    report = RemovalReport(removed_ids=[r.id for r in train if r.id in contaminated])
    survivors = [r for r in train if r.id not in contaminated]
    return survivors, report


def two_stage_cluster(
    records: list[SequenceRecord],
    stage1: tuple[float, float] = (0.65, 0.85),
    stage2: tuple[float, float] = (0.50, 0.75),
    prefilter: bool | None = None,
) -> dict[str, str]:
    """Two clustering passes composed member -> stage-1 rep -> stage-2 rep."""
    a1 = greedy_cluster(records, stage1[0], stage1[1], prefilter=prefilter)
    rep1_of = {asg.member_id: asg.rep_id for asg in a1}
    by_id = {r.id: r for r in records}
    rep1_ids = sorted({asg.rep_id for asg in a1})
    rep_records = [by_id[rid] for rid in rep1_ids]
    a2 = greedy_cluster(rep_records, stage2[0], stage2[1], prefilter=prefilter)
    rep2_of = {asg.member_id: asg.rep_id for asg in a2}
    return {r.id: rep2_of[rep1_of[r.id]] for r in records}
