"""Profile ingestion, log-odds scoring, and hard-negative mutant sampling.

A profile holds per-position match emission probabilities for one protein
family plus a 20-residue background distribution. Position-specific scores
are ``S[i][a] = log2(e[i][a]) - log2(b[a])`` with both operands clipped at
1e-9, and the score drop of substituting residue ``a`` at position ``i`` of
an anchor is ``dS[i][a] = S[i][a] - S[i][wt(i)]``.

Hard negatives are mutants that keep high sequence identity while breaking
the conserved profile: every substituted position drops more than 1 bit,
the total drop is at least 16 bits, and substitutions are spaced at least
``max(6, L // 8)`` apart. Candidate tuples are rejection-sampled uniformly
(without replacement within a proposal) from the eligible (position,
residue) pool, at most ``proposals_per_k`` proposals for each substitution
count k, scanning k upward from ``k_min = max(k_floor,
ceil(sum_threshold / min dS))``; the first accepted proposal wins and
exhaustion yields no mutant.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

from .rng import make_rng
from .seqio import AMINO_ACIDS, PairExample, SequenceRecord

_AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}

PROB_CLIP = 1e-9

# Null-model residue frequencies (standard amino-acid background, normalized
# to sum to one at load). Overridable per run via [hard_negatives] config.
DEFAULT_BACKGROUND_TABLE: dict[str, float] = {
    "A": 0.0787945, "C": 0.0151600, "D": 0.0535222, "E": 0.0668298,
    "F": 0.0397062, "G": 0.0695071, "H": 0.0229198, "I": 0.0590092,
    "K": 0.0594422, "L": 0.0963728, "M": 0.0237718, "N": 0.0414386,
    "P": 0.0482904, "Q": 0.0395639, "R": 0.0557976, "S": 0.0720103,
    "T": 0.0652441, "V": 0.0673199, "W": 0.0114356, "Y": 0.0304642,
}


def default_background() -> np.ndarray:
    b = np.array([DEFAULT_BACKGROUND_TABLE[a] for a in AMINO_ACIDS], dtype=np.float64)
    return b / b.sum()


class ProfileError(Exception):
    pass


class UnsupportedAlphabetError(ProfileError):
    pass


class ProfileFormatError(ProfileError):
    pass


def build_log_odds(emissions: np.ndarray, background: np.ndarray) -> np.ndarray:
    """S = log2(e) - log2(b), both clipped at 1e-9 before the log."""
    emissions = np.asarray(emissions, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[1] != background.shape[0]:
        raise ValueError(
            f"shape mismatch: emissions {emissions.shape}, background {background.shape}"
        )
    return np.log2(np.maximum(emissions, PROB_CLIP)) - np.log2(
        np.maximum(background, PROB_CLIP)
    )


class ProfileMatrix:
    """Match emissions, background, and derived log-odds for one family."""

    def __init__(
        self,
        family_id: str,
        emissions: np.ndarray,
        background: np.ndarray | None = None,
        row_sum_tol: float = 1e-6,
    ):
        emissions = np.asarray(emissions, dtype=np.float64)
        if background is None:
            background = default_background()
        background = np.asarray(background, dtype=np.float64)
        if emissions.ndim != 2 or emissions.shape[1] != 20:
            raise ValueError(f"emissions must be Lx20, got {emissions.shape}")
        if background.shape != (20,):
            raise ValueError(f"background must have 20 entries, got {background.shape}")
        row_sums = emissions.sum(axis=1)
        bad = np.abs(row_sums - 1.0) > row_sum_tol
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"emission row {i} sums to {row_sums[i]!r}")
        if abs(background.sum() - 1.0) > 1e-6:
            raise ValueError(f"background sums to {background.sum()!r}")
        self.family_id = family_id
        self.emissions = emissions
        self.background = background
        self.log_odds = build_log_odds(emissions, background)

    @property
    def model_len(self) -> int:
        return self.emissions.shape[0]


def parse_hmm_profile(
    source: bytes | str | IO,
    background: np.ndarray | None = None,
    row_sum_tol: float = 1e-4,
) -> ProfileMatrix:
    """Parse the first model of an HMMER3 ASCII file.

    Only the NAME/LENG/ALPH header lines and the 20 match-emission numbers of
    each state block are consumed; emission values are -ln(p) with '*'
    meaning probability zero. Insert emissions and transitions are skipped.
    The default row-sum tolerance is loose because files print 5 decimals.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.splitlines()

    name = None
    leng = None
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if line.startswith("NAME"):
            name = line.split(None, 1)[1].strip()
        elif line.startswith("LENG"):
            leng = int(line.split()[1])
        elif line.startswith("ALPH"):
            alph = line.split()[1].strip().lower()
            if alph != "amino":
                raise UnsupportedAlphabetError(f"alphabet {alph!r} is not amino")
        elif line.startswith("HMM "):
            i += 1
            break
        i += 1
    else:
        raise ProfileFormatError("no model section (missing 'HMM' line)")
    if name is None or leng is None:
        raise ProfileFormatError("missing NAME or LENG header")

    # skip the transition-name line that follows the residue-order line
    if i < n and lines[i].strip().startswith("m->m"):
        i += 1

    def parse_values(tokens: list[str], where: str) -> list[float]:
        if len(tokens) < 20:
            raise ProfileFormatError(f"{where}: expected 20 values, got {len(tokens)}")
        out = []
        for tok in tokens[:20]:
            if tok == "*":
                out.append(0.0)
            else:
                out.append(math.exp(-float(tok)))
        return out

    rows: list[list[float]] = []
    expect_state = 1
    while i < n:
        stripped = lines[i].strip()
        if stripped.startswith("//"):
            break
        fields = stripped.split()
        if not fields:
            i += 1
            continue
        if fields[0] == "COMPO":
            i += 3  # COMPO block: composite line + insert line + transition line
            continue
        if fields[0].isdigit():
            state = int(fields[0])
            if state != expect_state:
                raise ProfileFormatError(
                    f"expected match state {expect_state}, found {state}"
                )
            rows.append(parse_values(fields[1:], f"state {state}"))
            expect_state += 1
            i += 3  # skip this block's insert-emission and transition lines
            continue
        i += 1
    if len(rows) != leng:
        raise ProfileFormatError(f"LENG={leng} but parsed {len(rows)} match states")
    return ProfileMatrix(
        family_id=name,
        emissions=np.array(rows, dtype=np.float64),
        background=background,
        row_sum_tol=row_sum_tol,
    )


def family_eligible(median_seq_len: float, model_len: int, tolerance: float = 0.10) -> bool:
    """True iff the family's median length is within tolerance of the model length."""
    if median_seq_len <= 0 or model_len <= 0:
        raise ValueError("lengths must be positive")
    return abs(median_seq_len - model_len) <= tolerance * model_len


def delta_scores(profile: ProfileMatrix, anchor: SequenceRecord | str) -> np.ndarray:
    """Per-position score drops dS[i][a] for substituting a at anchor position i.

    Uses the direct position map i -> i for i < min(L, model_len). Rows past
    the model and rows whose wild-type residue is non-standard are zeroed so
    they contribute no candidates (candidates require dS < 0).
    """
    seq = anchor.sequence if isinstance(anchor, SequenceRecord) else anchor
    L = len(seq)
    out = np.zeros((L, 20), dtype=np.float64)
    limit = min(L, profile.model_len)
    for i in range(limit):
        wt = _AA_INDEX.get(seq[i])
        if wt is None:
            continue
        out[i, :] = profile.log_odds[i, :] - profile.log_odds[i, wt]
        out[i, wt] = 0.0
    return out


@dataclass(frozen=True)
class HardNegConfig:
    per_pos_threshold: float = -1.0
    sum_threshold: float = -16.0
    spacing_min_abs: int = 6
    spacing_len_divisor: int = 8
    k_floor: int = 6
    k_max: int = 50
    proposals_per_k: int = 2048
    family_len_tolerance: float = 0.10
    per_family_cap: int = 100
    len_min: int = 6
    len_max: int = 1023

    def __post_init__(self):
        if not self.per_pos_threshold < 0:
            raise ValueError("per_pos_threshold must be negative")
        if not self.sum_threshold < self.per_pos_threshold:
            raise ValueError("sum_threshold must be below per_pos_threshold")
        if not (1 <= self.k_floor <= self.k_max):
            raise ValueError("need 1 <= k_floor <= k_max")


_PROPOSAL_CHUNK = 256  # fixed; part of the deterministic draw-order contract


def sample_hard_negative(
    anchor: SequenceRecord | str,
    delta: np.ndarray,
    cfg: HardNegConfig,
    seed: int,
) -> str | None:
    """Rejection-sample a profile-breaking mutant of the anchor, or None.

    Proposals for each k are uniform k-subsets of the (position, residue)
    candidate pool, drawn in fixed chunks of 256 from PCG64(seed); the first
    proposal meeting the sum, spacing, and range constraints is returned.
    """
    seq = anchor.sequence if isinstance(anchor, SequenceRecord) else anchor
    L = len(seq)
    if not (cfg.len_min <= L <= cfg.len_max):
        return None

    pos_idx, res_idx = np.nonzero(delta < cfg.per_pos_threshold)
    pool = pos_idx.shape[0]
    if pool == 0:
        return None
    drops = delta[pos_idx, res_idx]

    spacing = max(cfg.spacing_min_abs, L // cfg.spacing_len_divisor)
    k_min = max(cfg.k_floor, math.ceil(cfg.sum_threshold / float(drops.min())))
    if k_min > cfg.k_max:
        return None

    rng = make_rng(seed)
    for k in range(k_min, cfg.k_max + 1):
        if k > pool:
            break
        remaining = cfg.proposals_per_k
        while remaining > 0:
            chunk = min(_PROPOSAL_CHUNK, remaining)
            keys = rng.random((chunk, pool))
            if k < pool:
                picks = np.argpartition(keys, k, axis=1)[:, :k]
            else:
                picks = np.tile(np.arange(pool), (chunk, 1))
            cand_pos = pos_idx[picks]
            cand_drop = drops[picks]
            sums_ok = cand_drop.sum(axis=1) <= cfg.sum_threshold
            sorted_pos = np.sort(cand_pos, axis=1)
            if k > 1:
                spacing_ok = (np.diff(sorted_pos, axis=1) >= spacing).all(axis=1)
            else:
                spacing_ok = np.ones(chunk, dtype=bool)
            accepted = np.nonzero(sums_ok & spacing_ok)[0]
            if accepted.size > 0:
                row = int(accepted[0])
                mutant = list(seq)
                for j in range(k):
                    mutant[int(cand_pos[row, j])] = AMINO_ACIDS[int(res_idx[picks[row, j]])]
                return "".join(mutant)
            remaining -= chunk
    return None


@dataclass
class HardNegReport:
    anchors: int = 0
    with_negative: int = 0
    families_processed: int = 0
    families_skipped_no_profile: int = 0
    families_skipped_length: int = 0
    skipped_family_ids: list[str] = field(default_factory=list)

    @property
    def fraction_with_negative(self) -> float:
        return self.with_negative / self.anchors if self.anchors else 0.0


def build_hard_negative_dataset(
    records: Iterable[SequenceRecord],
    profiles: Mapping[str, ProfileMatrix],
    cfg: HardNegConfig = HardNegConfig(),
    base_seed: int = 42,
) -> tuple[list[PairExample], HardNegReport]:
    """Emit anchor/positive/hard-negative rows for every eligible family.

    Families are taken in order of first appearance; family ordinal ``i``
    (counted over all families, skipped or not) fixes the sampling seed at
    ``base_seed + i``. Per family, rows with length outside
    [len_min, len_max] are dropped, then the first ``per_family_cap``
    survivors become anchors. The positive is the next family member in
    input order (self when the family is a singleton).
    """
    families: dict[str, list[SequenceRecord]] = {}
    for rec in records:
        if rec.group_id is None:
            raise ValueError(f"record {rec.id!r} has no group_id")
        families.setdefault(rec.group_id, []).append(rec)

    pairs: list[PairExample] = []
    report = HardNegReport()
    for ordinal, (fam, members) in enumerate(families.items()):
        profile = profiles.get(fam)
        if profile is None:
            report.families_skipped_no_profile += 1
            report.skipped_family_ids.append(fam)
            continue
        median_len = statistics.median(len(m.sequence) for m in members)
        if not family_eligible(median_len, profile.model_len, cfg.family_len_tolerance):
            report.families_skipped_length += 1
            report.skipped_family_ids.append(fam)
            continue
        report.families_processed += 1
        seed = base_seed + ordinal
        eligible = [
            (i, m)
            for i, m in enumerate(members)
            if cfg.len_min <= len(m.sequence) <= cfg.len_max
        ]
        for member_idx, anchor in eligible[: cfg.per_family_cap]:
            positive = members[(member_idx + 1) % len(members)]
            ds = delta_scores(profile, anchor)
            mutant = sample_hard_negative(anchor, ds, cfg, seed)
            report.anchors += 1
            if mutant is not None:
                report.with_negative += 1
            pairs.append(
                PairExample(
                    anchor=anchor.sequence,
                    positive=positive.sequence,
                    group=fam,
                    hard_negative=mutant,
                )
            )
    return pairs, report
