import io
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protembed.profile import (
    HardNegConfig,
    ProfileFormatError,
    ProfileMatrix,
    UnsupportedAlphabetError,
    build_hard_negative_dataset,
    build_log_odds,
    default_background,
    delta_scores,
    family_eligible,
    parse_hmm_profile,
    sample_hard_negative,
)
from protembed.seqio import AMINO_ACIDS, SequenceRecord, write_pairs
from protembed.rng import make_rng

AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}


def make_hmm_text(name: str, emissions: np.ndarray) -> str:
    """Render a minimal HMMER3 ASCII model from emission probabilities."""
    L = emissions.shape[0]
    lines = [
        "HMMER3/f [3.4 | test]",
        f"NAME  {name}",
        f"LENG  {L}",
        "ALPH  amino",
        "HMM          " + "        ".join(AMINO_ACIDS),
        "            m->m     m->i     m->d     i->m     i->i     d->m     d->d",
    ]
    ins = "  ".join(["2.77258"] * 20)
    trans = "  ".join(["0.01", "4.60", "4.60", "0.60", "0.77", "0.48", "0.96"])
    lines.append("  COMPO   " + "  ".join(f"{v:.5f}" for v in np.full(20, 2.99573)))
    lines.append("          " + ins)
    lines.append("          " + trans)
    for i in range(L):
        vals = []
        for p in emissions[i]:
            vals.append("*" if p == 0.0 else f"{-math.log(p):.8f}")
        lines.append(f"   {i + 1}   " + "  ".join(vals) + f"  {i + 1} x - - -")
        lines.append("          " + ins)
        lines.append("          " + trans)
    lines.append("//")
    return "\n".join(lines) + "\n"


def reference_parse(text: str) -> tuple[str, int, np.ndarray]:
    """Independent parse of the match emissions (regex-driven, line-oriented)."""
    name = re.search(r"^NAME\s+(\S+)", text, re.M).group(1)
    leng = int(re.search(r"^LENG\s+(\d+)", text, re.M).group(1))
    rows = []
    for m in re.finditer(r"^\s+(\d+)\s+((?:(?:\d+\.\d+|\*)\s+){20})", text, re.M):
        state = int(m.group(1))
        assert state == len(rows) + 1
        vals = m.group(2).split()
        rows.append([0.0 if v == "*" else math.exp(-float(v)) for v in vals])
    return name, leng, np.array(rows)


def rigged_profile(
    family: str, wt: str, drop_bits: float, rng=None, background=None
) -> ProfileMatrix:
    """Profile whose wild-type residue is strongly favored at every position,
    so every substitution drops about ``drop_bits`` bits."""
    L = len(wt)
    emissions = np.zeros((L, 20))
    for i, a in enumerate(wt):
        high = 0.9
        low = high * 2.0 ** (-drop_bits)
        row = np.full(20, low)
        row[AA_INDEX[a]] = high
        emissions[i] = row / row.sum()
    return ProfileMatrix(family, emissions, background=background)


class TestLogOdds:
    def test_equal_distributions_zero(self):
        e = np.full((4, 20), 0.05)
        b = np.full(20, 0.05)
        assert np.abs(build_log_odds(e, b)).max() == 0.0

    def test_zero_emission_clipped(self):
        e = np.full((1, 20), 0.05)
        e[0, 0] = 0.0
        b = np.full(20, 0.05)
        S = build_log_odds(e, b)
        assert S[0, 0] == pytest.approx(-25.575424759098897, abs=1e-12)

    def test_one_bit(self):
        e = np.full((1, 20), 0.05)
        e[0, 3] = 0.1
        b = np.full(20, 0.05)
        assert build_log_odds(e, b)[0, 3] == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_log_odds(np.ones((2, 19)), np.ones(20))


class TestParseHmm:
    def test_zero_value_is_probability_one(self):
        em = np.zeros((1, 20))
        em[0, 0] = 1.0
        text = make_hmm_text("F1", em)
        prof = parse_hmm_profile(text, row_sum_tol=1e-6)
        assert prof.emissions[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_star_is_probability_zero(self):
        em = np.zeros((1, 20))
        em[0, 0] = 1.0
        prof = parse_hmm_profile(make_hmm_text("F1", em), row_sum_tol=1e-6)
        assert prof.emissions[0, 5] == 0.0

    def test_five_state_profile_matches_reference_parse(self):
        rng = make_rng(21)
        em = rng.random((5, 20))
        em /= em.sum(axis=1, keepdims=True)
        text = make_hmm_text("PF00042", em)
        prof = parse_hmm_profile(text)
        name, leng, ref = reference_parse(text)
        assert prof.family_id == name == "PF00042"
        assert prof.model_len == leng == 5
        assert np.allclose(prof.emissions, ref, atol=1e-8)

    def test_non_amino_alphabet_rejected(self):
        text = make_hmm_text("F", np.full((1, 20), 0.05)).replace("ALPH  amino", "ALPH  DNA")
        with pytest.raises(UnsupportedAlphabetError):
            parse_hmm_profile(text)

    def test_leng_mismatch_rejected(self):
        text = make_hmm_text("F", np.full((2, 20), 0.05)).replace("LENG  2", "LENG  3")
        with pytest.raises(ProfileFormatError):
            parse_hmm_profile(text)

    def test_bytes_input(self):
        em = np.full((2, 20), 0.05)
        prof = parse_hmm_profile(make_hmm_text("F", em).encode())
        assert prof.model_len == 2


class TestProfileMatrix:
    def test_row_sum_invariant(self):
        bad = np.full((1, 20), 0.05)
        bad[0, 0] = 0.5
        with pytest.raises(ValueError):
            ProfileMatrix("F", bad)

    def test_background_sums_to_one(self):
        assert default_background().sum() == pytest.approx(1.0, abs=1e-12)


class TestFamilyEligible:
    @pytest.mark.parametrize(
        "median,model,tol,expect",
        [(100, 100, 0.10, True), (111, 100, 0.10, False), (90, 100, 0.10, True)],
    )
    def test_examples(self, median, model, tol, expect):
        assert family_eligible(median, model, tol) is expect


class TestDeltaScores:
    def test_wild_type_column_zero(self):
        wt = "ACDEF"
        prof = rigged_profile("F", wt, 4.0)
        ds = delta_scores(prof, wt)
        for i, a in enumerate(wt):
            assert ds[i, AA_INDEX[a]] == 0.0
        assert (ds <= 0).all()

    def test_subtraction(self):
        e = np.full((1, 20), 0.02)
        e[0, 0] = 0.05 * 4.0  # S[wt]=2 bits over uniform background
        e[0, 1] = 0.05 * 2.0 ** (-7.0)  # S[a]=-7
        e[0] /= e[0].sum()
        # renormalization shifts both scores equally, so the delta is exact
        prof = ProfileMatrix("F", e, background=np.full(20, 0.05))
        ds = delta_scores(prof, "A")
        assert ds[0, 1] == pytest.approx(-9.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = make_rng(31)
        em = rng.random((30, 20))
        em /= em.sum(axis=1, keepdims=True)
        prof = ProfileMatrix("F", em)
        anchor = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=30))
        ds = delta_scores(prof, anchor)
        S = prof.log_odds
        for i in range(30):
            for a in range(20):
                expect = S[i, a] - S[i, AA_INDEX[anchor[i]]]
                if a == AA_INDEX[anchor[i]]:
                    expect = 0.0
                assert ds[i, a] == pytest.approx(expect, abs=1e-12)

    def test_positions_past_model_have_no_candidates(self):
        prof = rigged_profile("F", "ACDEF", 9.0)
        ds = delta_scores(prof, "ACDEFGHIKL")  # anchor longer than model
        assert (ds[5:] == 0).all()

    def test_nonstandard_wild_type_excluded(self):
        prof = rigged_profile("F", "ACDEF", 9.0)
        ds = delta_scores(prof, "ACXEF")
        assert (ds[2] == 0).all()


def audit_mutant(anchor: str, mutant: str, delta: np.ndarray, cfg: HardNegConfig) -> None:
    """Independent recomputation of every acceptance constraint."""
    L = len(anchor)
    positions = [i for i in range(L) if anchor[i] != mutant[i]]
    k = len(positions)
    # (a) per-position drops below threshold; (e) differs exactly at these
    drops = []
    for i in positions:
        d = delta[i, AA_INDEX[mutant[i]]]
        assert d < cfg.per_pos_threshold
        drops.append(d)
    # (b) total drop
    assert sum(drops) <= cfg.sum_threshold
    # (c) spacing
    spacing = max(cfg.spacing_min_abs, L // cfg.spacing_len_divisor)
    ordered = sorted(positions)
    for x, y in zip(ordered, ordered[1:]):
        assert y - x >= spacing
    # (d) substitution count range
    pool = delta[delta < cfg.per_pos_threshold]
    k_min = max(cfg.k_floor, math.ceil(cfg.sum_threshold / float(pool.min())))
    assert k_min <= k <= cfg.k_max


class TestSampleHardNegative:
    def test_empty_candidate_pool(self):
        cfg = HardNegConfig()
        delta = np.zeros((30, 20))  # nothing below -1 bit
        assert sample_hard_negative("A" * 30, delta, cfg, seed=42) is None

    def test_two_position_example(self):
        cfg = HardNegConfig(k_floor=2)
        anchor = "ACDEFGHIKLMN"  # L = 12
        delta = np.zeros((12, 20))
        delta[0, AA_INDEX["W"]] = -9.0
        delta[7, AA_INDEX["Y"]] = -9.0
        mutant = sample_hard_negative(anchor, delta, cfg, seed=42)
        assert mutant is not None
        diff = [i for i in range(12) if anchor[i] != mutant[i]]
        assert diff == [0, 7]
        assert mutant[0] == "W" and mutant[7] == "Y"
        audit_mutant(anchor, mutant, delta, cfg)

    def test_defaults_require_six_substitutions(self):
        cfg = HardNegConfig()  # k_floor 6
        anchor = "ACDEFGHIKLMN"
        delta = np.zeros((12, 20))
        delta[0, AA_INDEX["W"]] = -9.0
        delta[7, AA_INDEX["Y"]] = -9.0
        assert sample_hard_negative(anchor, delta, cfg, seed=42) is None

    def test_length_bounds(self):
        cfg = HardNegConfig()
        delta = np.full((5, 20), -9.0)
        assert sample_hard_negative("ACDEF", delta, cfg, seed=1) is None  # L=5 < 6

    def test_determinism(self):
        rng = make_rng(55)
        anchor = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=80))
        prof = rigged_profile("F", anchor, 4.0)
        delta = delta_scores(prof, anchor)
        cfg = HardNegConfig()
        out = [sample_hard_negative(anchor, delta, cfg, seed=42) for _ in range(3)]
        assert out[0] is not None
        assert out[0] == out[1] == out[2]

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_accepted_mutants_satisfy_all_constraints(self, seed):
        rng = make_rng(seed)
        L = int(rng.integers(60, 120))
        anchor = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=L))
        drop = float(rng.uniform(2.0, 8.0))
        prof = rigged_profile("F", anchor, drop)
        delta = delta_scores(prof, anchor)
        cfg = HardNegConfig()
        mutant = sample_hard_negative(anchor, delta, cfg, seed=seed)
        if mutant is not None:
            audit_mutant(anchor, mutant, delta, cfg)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_relaxing_sum_threshold_preserves_feasibility(self, seed):
        rng = make_rng(seed)
        L = int(rng.integers(60, 100))
        anchor = "".join(AMINO_ACIDS[i] for i in rng.integers(0, 20, size=L))
        prof = rigged_profile("F", anchor, float(rng.uniform(2.5, 6.0)))
        delta = delta_scores(prof, anchor)
        strict = HardNegConfig()
        relaxed = HardNegConfig(sum_threshold=-8.0)
        if sample_hard_negative(anchor, delta, strict, seed=seed) is not None:
            assert sample_hard_negative(anchor, delta, relaxed, seed=seed) is not None


class TestBuildDataset:
    def _family(self, rng, fam: str, n: int, L: int = 90):
        seqs = []
        base = rng.integers(0, 20, size=L)
        for i in range(n):
            s = base.copy()
            # few in-family point differences so lengths and content stay close
            for p in rng.integers(0, L, size=3):
                s[p] = rng.integers(0, 20)
            seqs.append(
                SequenceRecord(
                    id=f"{fam}_{i}", sequence="".join(AMINO_ACIDS[j] for j in s), group_id=fam
                )
            )
        return seqs

    def test_all_feasible_family(self):
        rng = make_rng(77)
        records = self._family(rng, "FA", 3)
        prof = rigged_profile("FA", records[0].sequence, 5.0)
        pairs, report = build_hard_negative_dataset(records, {"FA": prof})
        assert len(pairs) == 3
        assert report.anchors == 3
        assert report.with_negative == 3
        assert all(p.hard_negative for p in pairs)
        assert {p.group for p in pairs} == {"FA"}
        # positives come from the family, distinct from the anchor
        for p in pairs:
            assert p.positive != p.anchor or len(records) == 1

    def test_missing_profile_skipped(self):
        rng = make_rng(78)
        records = self._family(rng, "FA", 2) + self._family(rng, "FB", 2)
        prof = rigged_profile("FA", records[0].sequence, 5.0)
        pairs, report = build_hard_negative_dataset(records, {"FA": prof})
        assert report.families_skipped_no_profile == 1
        assert {p.group for p in pairs} == {"FA"}

    def test_length_ineligible_family_skipped(self):
        rng = make_rng(79)
        records = self._family(rng, "FA", 2, L=90)
        prof = rigged_profile("FA", "A" * 60, 5.0)  # model length far from 90
        pairs, report = build_hard_negative_dataset(records, {"FA": prof})
        assert pairs == []
        assert report.families_skipped_length == 1

    def test_per_family_cap(self):
        rng = make_rng(80)
        records = self._family(rng, "FA", 7)
        prof = rigged_profile("FA", records[0].sequence, 5.0)
        cfg = HardNegConfig(per_family_cap=4)
        pairs, report = build_hard_negative_dataset(records, {"FA": prof}, cfg)
        assert report.anchors == 4

    def test_rerun_is_byte_identical(self):
        rng = make_rng(81)
        records = self._family(rng, "FA", 3) + self._family(rng, "FB", 4)
        profs = {
            "FA": rigged_profile("FA", records[0].sequence, 5.0),
            "FB": rigged_profile("FB", records[3].sequence, 5.0),
        }
        bufs = []
        for _ in range(2):
            pairs, _ = build_hard_negative_dataset(records, profs, base_seed=42)
            buf = io.StringIO()
            write_pairs(pairs, buf)
            bufs.append(buf.getvalue())
        assert bufs[0] == bufs[1]

    def test_fraction_reported(self):
        rng = make_rng(82)
        records = self._family(rng, "FA", 3)
        prof = rigged_profile("FA", records[0].sequence, 5.0)
        _, report = build_hard_negative_dataset(records, {"FA": prof})
        assert report.fraction_with_negative == 1.0
