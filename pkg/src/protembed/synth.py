"""Synthetic desk-scale data bundles.

A bundle holds everything one training-plus-evaluation run needs: a sidecar
FASTA, a PEMB1 embedding file covering every id, grouped record streams for
the two family-style datasets, pre-paired rows with hard negatives, pair-
native interaction rows, continuous-score rows, and self-contained task
manifests. Embeddings follow a group-mean plus Gaussian-noise model so that
contrastive structure exists but is partly scrambled; everything is a pure
function of the seed.

Dataset roles use the fixed names pfam / hard_neg / afdb / string / dms so
ablation configurations can address them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import synth_records, SyntheticSpec
from .rng import make_rng
from .seqio import (
    AMINO_ACIDS,
    EmbeddingSet,
    PairExample,
    ScoredPair,
    SequenceRecord,
    write_embeddings,
    write_fasta,
    write_pairs,
    write_records,
    write_scored,
)


@dataclass(frozen=True)
class BundleSpec:
    n_groups: int = 16
    members_per_group: int = 8
    dim: int = 16
    noise: float = 1.5
    signal_frac: float = 0.5  # fraction of dims carrying group structure
    signal_noise_frac: float = 0.35  # within-subspace jitter relative to noise
    seq_len: tuple[int, int] = (30, 60)
    holdout_frac: float = 0.25
    struct_groups: int = 8
    struct_members: int = 6
    dms_assays: int = 4
    dms_rows_per_assay: int = 30
    hn_noise: float = 1.2
    seed: int = 42


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _member_vectors(
    groups: list[str],
    ids_by_group: dict[str, list[str]],
    dim: int,
    noise: float,
    rng,
    signal_frac: float = 0.5,
    signal_noise_frac: float = 0.35,
) -> tuple[list[str], np.ndarray]:
    """Group-mean embeddings with anisotropic noise, mixed by a rotation.

    Group means live in a signal subspace of ``signal_frac * dim``
    dimensions; members get mild jitter inside it and stronger nuisance
    noise in the complement, then everything is rotated by a seeded
    orthogonal matrix and row-normalized. Cosine geometry is unchanged by
    the rotation, but suppressing the nuisance directions requires learning
    it, which is what the adapter is for. Noise zero makes group members
    bit-identical.
    """
    r = max(1, min(dim, int(round(signal_frac * dim))))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for g in groups:
        mean = np.zeros(dim)
        mean[:r] = _unit(rng.standard_normal(r))
        for rid in ids_by_group[g]:
            v = mean.copy()
            if noise > 0:
                v[:r] += (
                    signal_noise_frac * noise * rng.standard_normal(r) / math.sqrt(r)
                )
                if r < dim:
                    v[r:] += noise * rng.standard_normal(dim - r) / math.sqrt(dim - r)
            ids.append(rid)
            rows.append(_unit(v @ q.T))
    return ids, np.vstack(rows)


def _mutate(seq: str, rng, n_subs: int = 3) -> str:
    out = list(seq)
    positions = rng.choice(len(seq), size=min(n_subs, len(seq)), replace=False)
    for p in positions:
        current = out[int(p)]
        choices = [a for a in AMINO_ACIDS if a != current]
        out[int(p)] = choices[int(rng.integers(0, len(choices)))]
    return "".join(out)


def build_bundle(spec: BundleSpec) -> dict:
    """All bundle artifacts as in-memory objects (see write_bundle)."""
    records_a = synth_records(
        SyntheticSpec(
            n_groups=spec.n_groups,
            members_per_group=spec.members_per_group,
            seq_len=spec.seq_len,
            group_prefix="FAM",
        ),
        make_rng(spec.seed, "records-a"),
    )
    records_b = synth_records(
        SyntheticSpec(
            n_groups=spec.struct_groups,
            members_per_group=spec.struct_members,
            seq_len=spec.seq_len,
            group_prefix="STR",
        ),
        make_rng(spec.seed, "records-b"),
    )

    all_ids: list[str] = []
    all_vecs: list[np.ndarray] = []
    for name, recs in (("a", records_a), ("b", records_b)):
        groups = sorted({r.group_id for r in recs})
        by_group: dict[str, list[str]] = {g: [] for g in groups}
        for r in recs:
            by_group[r.group_id].append(r.id)
        ids, vecs = _member_vectors(
            groups,
            by_group,
            spec.dim,
            spec.noise,
            make_rng(spec.seed, "emb", name),
            signal_frac=spec.signal_frac,
            signal_noise_frac=spec.signal_noise_frac,
        )
        all_ids.extend(ids)
        all_vecs.append(vecs)

    # train/holdout split of corpus A members, per group
    by_group_a: dict[str, list[SequenceRecord]] = {}
    for r in records_a:
        by_group_a.setdefault(r.group_id, []).append(r)
    n_hold = max(1, int(round(spec.holdout_frac * spec.members_per_group)))
    train_a: list[SequenceRecord] = []
    held_a: list[SequenceRecord] = []
    for g in sorted(by_group_a):
        members = by_group_a[g]
        held_a.extend(members[:n_hold])
        train_a.extend(members[n_hold:])
    train_a_sorted = sorted(train_a, key=lambda r: (r.group_id, r.id))

    emb_index = {rid: i for i, rid in enumerate(all_ids)}
    matrix = np.vstack(all_vecs)

    # hard-negative rows over corpus A training members
    rng_hn = make_rng(spec.seed, "hard-neg")
    train_ids_a = {r.id for r in train_a}
    hn_pairs: list[PairExample] = []
    hn_ids: list[str] = []
    hn_vecs: list[np.ndarray] = []
    hn_records: list[SequenceRecord] = []
    for g in sorted(by_group_a):
        members = [r for r in by_group_a[g] if r.id in train_ids_a]
        for i, anchor in enumerate(members):
            positive = members[(i + 1) % len(members)]
            hn_id = f"HN_{anchor.id}"
            base = matrix[emb_index[anchor.id]]
            hn_vec = _unit(
                base + spec.hn_noise * rng_hn.standard_normal(spec.dim) / math.sqrt(spec.dim)
            )
            hn_ids.append(hn_id)
            hn_vecs.append(hn_vec)
            hn_records.append(
                SequenceRecord(
                    id=hn_id, sequence=_mutate(anchor.sequence, make_rng(spec.seed, "mut", anchor.id))
                )
            )
            hn_pairs.append(
                PairExample(anchor=anchor.id, positive=positive.id, group=g, hard_negative=hn_id)
            )

    # pair-native interaction rows over corpus B groups
    rng_ppi = make_rng(spec.seed, "ppi")
    by_group_b: dict[str, list[SequenceRecord]] = {}
    for r in records_b:
        by_group_b.setdefault(r.group_id, []).append(r)
    string_pairs: list[PairExample] = []
    row = 0
    for g in sorted(by_group_b):
        members = by_group_b[g]
        for _ in range(len(members)):
            i, j = rng_ppi.choice(len(members), size=2, replace=False)
            string_pairs.append(
                PairExample(
                    anchor=members[int(i)].id,
                    positive=members[int(j)].id,
                    group=f"ppi{row:05d}",
                )
            )
            row += 1

    # continuous-score rows: mutant embeddings drift from the wild type and
    # the score decreases with the drift magnitude, so ranking is learnable
    rng_dms = make_rng(spec.seed, "dms")
    dms_rows: list[ScoredPair] = []
    dms_ids: list[str] = []
    dms_vecs: list[np.ndarray] = []
    for a in range(spec.dms_assays):
        wt_id = f"WT_{a:03d}"
        wt_vec = _unit(rng_dms.standard_normal(spec.dim))
        dms_ids.append(wt_id)
        dms_vecs.append(wt_vec)
        for m in range(spec.dms_rows_per_assay):
            drift = float(rng_dms.uniform(0.05, 2.0))
            mut_id = f"MUT_{a:03d}_{m:03d}"
            vec = _unit(wt_vec + drift * rng_dms.standard_normal(spec.dim) / math.sqrt(spec.dim))
            dms_ids.append(mut_id)
            dms_vecs.append(vec)
            dms_rows.append(
                ScoredPair(
                    seq1=wt_id,
                    seq2=mut_id,
                    score=1.0 / (1.0 + drift),
                    assay_id=f"ASSAY_{a:03d}",
                )
            )
    dms_seq_records = [
        SequenceRecord(id=rid, sequence="".join(AMINO_ACIDS[i] for i in make_rng(spec.seed, "dms-seq", rid).integers(0, 20, size=40)))
        for rid in dms_ids
    ]

    ids = all_ids + hn_ids + dms_ids
    blocks = [matrix]
    if hn_vecs:
        blocks.append(np.vstack(hn_vecs))
    if dms_vecs:
        blocks.append(np.vstack(dms_vecs))
    embeddings = EmbeddingSet(ids, np.vstack(blocks), normalized=True)

    tasks = {
        "group_classification": {
            "name": "group_classification",
            "kind": "multiclass",
            "metric": "macro_f1",
            "labels": {r.id: r.group_id for r in records_a},
            "train_ids": [r.id for r in train_a],
            "test_ids": [r.id for r in held_a],
        },
        "retrieval": {
            "name": "retrieval",
            "kind": "retrieval",
            "metric": "recall_at_k",
            "labels": {r.id: r.group_id for r in records_a},
            "recall_k": 1,
        },
        "struct_classification": {
            "name": "struct_classification",
            "kind": "multiclass",
            "metric": "macro_f1",
            "labels": {r.id: r.group_id for r in records_b},
            "cv_folds": 4,
        },
    }

    sequences = records_a + records_b + hn_records + dms_seq_records
    return {
        "sequences": sequences,
        "embeddings": embeddings,
        "records_pfam": train_a_sorted,
        "records_afdb": sorted(records_b, key=lambda r: (r.group_id, r.id)),
        "pairs_hard_neg": hn_pairs,
        "pairs_string": string_pairs,
        "scored_dms": dms_rows,
        "tasks": tasks,
    }


def write_bundle(spec: BundleSpec, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = build_bundle(spec)
    paths: dict[str, Path] = {}

    paths["sequences"] = out / "sequences.fasta"
    write_fasta(bundle["sequences"], str(paths["sequences"]))
    paths["embeddings"] = out / "embeddings.pemb"
    write_embeddings(bundle["embeddings"], str(paths["embeddings"]))
    paths["records_pfam"] = out / "records_pfam.jsonl"
    write_records(bundle["records_pfam"], str(paths["records_pfam"]))
    paths["records_afdb"] = out / "records_afdb.jsonl"
    write_records(bundle["records_afdb"], str(paths["records_afdb"]))
    paths["pairs_hard_neg"] = out / "pairs_hard_neg.jsonl"
    write_pairs(bundle["pairs_hard_neg"], str(paths["pairs_hard_neg"]))
    paths["pairs_string"] = out / "pairs_string.jsonl"
    write_pairs(bundle["pairs_string"], str(paths["pairs_string"]))
    paths["scored_dms"] = out / "scored_dms.jsonl"
    write_scored(bundle["scored_dms"], str(paths["scored_dms"]))

    task_dir = out / "tasks"
    task_dir.mkdir(exist_ok=True)
    for name, task in bundle["tasks"].items():
        p = task_dir / f"{name}.json"
        p.write_text(json.dumps(task, sort_keys=True, indent=1) + "\n")
        paths[f"task_{name}"] = p
    return paths
