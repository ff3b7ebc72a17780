from functools import lru_cache

import numpy as np
import pytest

from protembed.cluster import (
    decontaminate,
    drop_cross_group,
    greedy_cluster,
    pairwise_identity,
    two_stage_cluster,
)
from protembed.seqio import AMINO_ACIDS, SequenceRecord
from protembed.rng import make_rng


def lcs_recursive(a: str, b: str) -> int:
    """Exhaustive LCS, memoized plain recursion; independent of the package."""

    @lru_cache(maxsize=None)
    def go(i: int, j: int) -> int:
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return go(i - 1, j - 1) + 1
        return max(go(i - 1, j), go(i, j - 1))

    return go(len(a), len(b))


def oracle_greedy(records, min_id, min_cov):
    """Straight-line reimplementation of the greedy clustering definition."""
    order = sorted(records, key=lambda r: (-len(r.sequence), r.id))
    reps = []
    out = {}
    for rec in order:
        chosen = None
        for rep in reps:
            ident, cov = pairwise_identity(rec.sequence, rep.sequence)
            if ident >= min_id and cov >= min_cov:
                chosen = rep
                break
        if chosen is None:
            reps.append(rec)
            out[rec.id] = rec.id
        else:
            out[rec.id] = chosen.id
    return out


def random_records(rng, n, lo=12, hi=26, prefix="r"):
    out = []
    for i in range(n):
        L = int(rng.integers(lo, hi + 1))
        out.append(
            SequenceRecord(
                id=f"{prefix}{i:03d}",
                sequence="".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=L)),
            )
        )
    return out


def mutate(seq: str, n_subs: int, rng, protect_ends: bool = True) -> str:
    out = list(seq)
    lo = 1 if protect_ends else 0
    hi = len(seq) - 1 if protect_ends else len(seq)
    positions = rng.choice(np.arange(lo, hi), size=n_subs, replace=False)
    for p in positions:
        choices = [a for a in AMINO_ACIDS if a != out[int(p)]]
        out[int(p)] = choices[int(rng.integers(0, 19))]
    return "".join(out)


class TestPairwiseIdentity:
    def test_identical(self):
        assert pairwise_identity("ACDW", "ACDW") == (1.0, 1.0)

    def test_one_substitution(self):
        ident, _ = pairwise_identity("ACDEFG", "ACDEYG")
        assert ident == pytest.approx(5 / 6)
        assert lcs_recursive("ACDEFG", "ACDEYG") == 5

    def test_disjoint(self):
        ident, cov = pairwise_identity("AAAA", "WWWW")
        assert ident == 0.0 and cov == 0.0

    def test_symmetry_and_oracle(self):
        rng = make_rng(17)
        for _ in range(40):
            a = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 6, size=rng.integers(3, 15)))
            b = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 6, size=rng.integers(3, 15)))
            i_ab, _ = pairwise_identity(a, b)
            i_ba, _ = pairwise_identity(b, a)
            assert i_ab == i_ba
            assert i_ab == pytest.approx(lcs_recursive(a, b) / min(len(a), len(b)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pairwise_identity("", "ACD")


class TestGreedyCluster:
    def test_identical_sequences_one_cluster(self):
        recs = [SequenceRecord(id=f"s{i}", sequence="ACDEFGHIKL") for i in range(3)]
        out = greedy_cluster(recs, 0.9, 0.9)
        assert len({a.rep_id for a in out}) == 1

    def test_dissimilar_singletons(self):
        rng = make_rng(2)
        recs = random_records(rng, 3, lo=30, hi=30)
        out = greedy_cluster(recs, 0.7, 0.8)
        assert len({a.rep_id for a in out}) == 3
        for a in out:
            assert a.member_id == a.rep_id
            assert a.identity == 1.0 and a.coverage == 1.0

    def test_planted_groups_match_oracle(self):
        rng = make_rng(3)
        records = []
        for g in range(10):
            base = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=30))
            for m in range(5):
                seq = base if m == 0 else mutate(base, 4, rng)  # ~87% identity
                records.append(SequenceRecord(id=f"g{g}m{m}", sequence=seq))
        got = {a.member_id: a.rep_id for a in greedy_cluster(records, 0.8, 0.8, prefilter=False)}
        want = oracle_greedy(records, 0.8, 0.8)
        assert got == want

    def test_threshold_audit(self):
        rng = make_rng(4)
        records = random_records(rng, 30) + [
            SequenceRecord(id=f"m{i}", sequence=mutate("ACDEFGHIKLMNPQRSTVWY", 2, rng))
            for i in range(10)
        ]
        by_id = {r.id: r for r in records}
        for a in greedy_cluster(records, 0.5, 0.5):
            ident, cov = pairwise_identity(
                by_id[a.member_id].sequence, by_id[a.rep_id].sequence
            )
            assert ident >= 0.5 and cov >= 0.5

    def test_prefilter_equals_brute_force_when_recall_is_total(self):
        # every sequence shares a common 6-mer, so the prefilter sees all reps
        rng = make_rng(5)
        tag = "ACDEFG"
        records = []
        for i in range(40):
            body = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=20))
            records.append(SequenceRecord(id=f"t{i:02d}", sequence=tag + body))
        plain = greedy_cluster(records, 0.6, 0.6, prefilter=False)
        fast = greedy_cluster(records, 0.6, 0.6, prefilter=True)
        assert plain == fast

    def test_prefilter_soundness(self):
        rng = make_rng(6)
        records = random_records(rng, 60, lo=10, hi=40)
        by_id = {r.id: r for r in records}
        for a in greedy_cluster(records, 0.45, 0.4, prefilter=True):
            ident, cov = pairwise_identity(
                by_id[a.member_id].sequence, by_id[a.rep_id].sequence
            )
            assert ident >= 0.45 and cov >= 0.4

    def test_duplicate_ids_rejected(self):
        recs = [SequenceRecord(id="x", sequence="ACD"), SequenceRecord(id="x", sequence="ACW")]
        with pytest.raises(ValueError):
            greedy_cluster(recs, 0.5, 0.5)


class TestDropCrossGroup:
    def test_cross_group_member_dropped(self):
        recs = [
            SequenceRecord(id="a", sequence="ACDEFGHIKL", group_id="A"),
            SequenceRecord(id="b", sequence="ACDEFGHIKL", group_id="B"),
        ]
        out = drop_cross_group(greedy_cluster(recs, 0.9, 0.9), recs)
        assert [r.id for r in out] == ["a"]  # rep kept, cross-group member dropped

    def test_same_group_cluster_retained(self):
        recs = [
            SequenceRecord(id="a", sequence="ACDEFGHIKL", group_id="A"),
            SequenceRecord(id="b", sequence="ACDEFGHIKL", group_id="A"),
        ]
        out = drop_cross_group(greedy_cluster(recs, 0.9, 0.9), recs)
        assert len(out) == 2

    def test_randomized_matches_direct_filter(self):
        rng = make_rng(7)
        records = []
        for g, fam in enumerate(("A", "B")):
            base = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=24))
            for m in range(12):
                records.append(
                    SequenceRecord(
                        id=f"{fam}{m}", sequence=mutate(base, 2, rng), group_id=fam
                    )
                )
        assignments = greedy_cluster(records, 0.6, 0.6)
        got = {r.id for r in drop_cross_group(assignments, records)}
        by_id = {r.id: r for r in records}
        want = {
            a.member_id
            for a in assignments
            if by_id[a.member_id].group_id == by_id[a.rep_id].group_id
        }
        assert got == want


class TestDecontaminate:
    def test_identical_train_test_removed(self):
        train = [SequenceRecord(id="t", sequence="ACDEFGHIKLMNPQRS")]
        test = [SequenceRecord(id="q", sequence="ACDEFGHIKLMNPQRS")]
        survivors, report = decontaminate(train, test)
        assert survivors == []
        assert report.removed_ids == ["t"]

    def test_unrelated_train_retained(self):
        rng = make_rng(8)
        train = random_records(rng, 12, lo=30, hi=40, prefix="tr")
        test = random_records(rng, 6, lo=30, hi=40, prefix="te")
        survivors, report = decontaminate(train, test)
        assert survivors == train
        assert report.count == 0

    def test_planted_homologs_removed_exactly(self):
        rng = make_rng(9)
        test = random_records(rng, 5, lo=40, hi=40, prefix="te")
        planted = [
            SequenceRecord(id=f"hom{i}", sequence=mutate(t.sequence, 12, rng))
            for i, t in enumerate(test)  # 70% identity, same length
        ]
        unrelated = random_records(rng, 10, lo=40, hi=40, prefix="un")
        survivors, report = decontaminate(planted + unrelated, test, min_id=0.5, min_cov=0.8)
        assert set(report.removed_ids) == {f"hom{i}" for i in range(5)}
        assert [r.id for r in survivors] == [r.id for r in unrelated]

    def test_empty_test_is_identity(self):
        rng = make_rng(10)
        train = random_records(rng, 8)
        survivors, report = decontaminate(train, [])
        assert survivors == train and report.count == 0

    def test_self_decontamination_is_empty(self):
        rng = make_rng(11)
        train = random_records(rng, 8)
        survivors, _ = decontaminate(train, train)
        assert survivors == []


class TestTwoStage:
    def test_singleton_maps_to_itself(self):
        recs = [SequenceRecord(id="only", sequence="ACDEFGHIKL")]
        assert two_stage_cluster(recs) == {"only": "only"}

    def test_chain_composition(self):
        # b joins a at stage 1; c clears only the looser stage-2 bar against
        # the stage-1 representative, so composition gives all three one rep
        rng = make_rng(12)
        a = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=40))
        b = mutate(a, 8, rng)  # ~80% identity with a
        c = mutate(a, 16, rng)  # ~60% identity with a, below stage-1 bar
        i_ab, _ = pairwise_identity(a, b)
        i_ac, _ = pairwise_identity(a, c)
        assert i_ab >= 0.65
        assert 0.50 <= i_ac < 0.65
        recs = [
            SequenceRecord(id="a", sequence=a),
            SequenceRecord(id="b", sequence=b),
            SequenceRecord(id="c", sequence=c),
        ]
        mapping = two_stage_cluster(recs, stage1=(0.65, 0.85), stage2=(0.50, 0.75))
        assert mapping == {"a": "a", "b": "a", "c": "a"}

    def test_matches_two_pass_oracle(self):
        rng = make_rng(13)
        records = []
        for g in range(6):
            base = "".join(AMINO_ACIDS[j] for j in rng.integers(0, 20, size=30))
            for m in range(4):
                records.append(
                    SequenceRecord(id=f"g{g}m{m}", sequence=mutate(base, 3, rng))
                )
        got = two_stage_cluster(records)
        rep1 = oracle_greedy(records, 0.65, 0.85)
        by_id = {r.id: r for r in records}
        rep_records = [by_id[r] for r in sorted(set(rep1.values()))]
        rep2 = oracle_greedy(rep_records, 0.50, 0.75)
        want = {r.id: rep2[rep1[r.id]] for r in records}
        assert got == want
