"""Multi-dataset batch scheduling and group-aware batch composition.

A batch plan is a pure function of (dataset sizes, batch size, max pairs,
seed): a sequence of steps, each drawing one batch from exactly one dataset.
Round-robin cycles the dataset index; proportional draws it with probability
proportional to dataset size. Datasets wrap to their beginning when
exhausted so the cycle is never broken.

For in-batch-negative losses a batch must not contain two rows with the same
group label, otherwise true positives would be scored as negatives. The
group-aware composer walks a group-sorted stream with a persistent cursor,
pairs two unconsumed members of each group as anchor/positive, skips rows
whose group is already present in the batch (they are revisited on later
passes), and flags short batches when fewer distinct groups remain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .rng import make_rng


class SamplerError(Exception):
    pass


@dataclass(frozen=True)
class PlanStep:
    dataset_index: int
    rows: tuple  # row indices, or (anchor_idx, positive_idx) pairs
    short: bool = False


@dataclass(frozen=True)
class BatchPlan:
    steps: tuple[PlanStep, ...]
    batch_size: int
    seed: int = 0

    def dataset_step_counts(self, n_datasets: int) -> list[int]:
        counts = [0] * n_datasets
        for s in self.steps:
            counts[s.dataset_index] += 1
        return counts

    def to_jsonl(self, dest) -> None:
        close = False
        if isinstance(dest, str):
            dest = open(dest, "w")
            close = True
        try:
            dest.write(json.dumps({"batch_size": self.batch_size, "seed": self.seed}) + "\n")
            for i, s in enumerate(self.steps):
                rows = [list(r) if isinstance(r, tuple) else r for r in s.rows]
                dest.write(
                    json.dumps(
                        {"step": i, "dataset": s.dataset_index, "rows": rows, "short": s.short}
                    )
                    + "\n"
                )
        finally:
            if close:
                dest.close()


def _sequential_rows(size: int, cursor: int, batch_size: int) -> tuple[tuple, int]:
    rows = tuple((cursor + j) % size for j in range(batch_size))
    return rows, (cursor + batch_size) % size


def round_robin_plan(
    dataset_sizes: Sequence[int], batch_size: int, max_pairs: int
) -> BatchPlan:
    """Cycle datasets 0..D-1, drawing sequential (wrapping) rows from each.

    Total scheduled rows never exceed ``max_pairs``; zero-size datasets are
    skipped in the cycle.
    """
    _check_plan_args(dataset_sizes, batch_size)
    active = [i for i, s in enumerate(dataset_sizes) if s > 0]
    if not active:
        return BatchPlan(steps=(), batch_size=batch_size)
    n_steps = max_pairs // batch_size
    cursors = {i: 0 for i in active}
    steps = []
    for t in range(n_steps):
        d = active[t % len(active)]
        rows, cursors[d] = _sequential_rows(dataset_sizes[d], cursors[d], batch_size)
        steps.append(PlanStep(dataset_index=d, rows=rows))
    return BatchPlan(steps=tuple(steps), batch_size=batch_size)


def proportional_plan(
    dataset_sizes: Sequence[int], batch_size: int, max_pairs: int, seed: int
) -> BatchPlan:
    """Draw each step's dataset with probability proportional to its size."""
    _check_plan_args(dataset_sizes, batch_size)
    sizes = np.asarray(dataset_sizes, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        return BatchPlan(steps=(), batch_size=batch_size, seed=seed)
    probs = sizes / total
    n_steps = max_pairs // batch_size
    rng = make_rng(seed)
    choices = rng.choice(len(sizes), size=n_steps, p=probs)
    cursors = [0] * len(sizes)
    steps = []
    for t in range(n_steps):
        d = int(choices[t])
        rows, cursors[d] = _sequential_rows(dataset_sizes[d], cursors[d], batch_size)
        steps.append(PlanStep(dataset_index=d, rows=rows))
    return BatchPlan(steps=tuple(steps), batch_size=batch_size, seed=seed)


def _check_plan_args(dataset_sizes: Sequence[int], batch_size: int) -> None:
    if len(dataset_sizes) < 1:
        raise SamplerError("need at least one dataset")
    if batch_size < 1:
        raise SamplerError("batch_size must be positive")
    if any(s < 0 for s in dataset_sizes):
        raise SamplerError("dataset sizes must be non-negative")


# -- group-aware composition ---------------------------------------------------


@dataclass(frozen=True)
class GroupCursor:
    position: int = 0
    consumed: frozenset[int] = frozenset()
    epoch: int = 0


@dataclass(frozen=True)
class GroupBatch:
    rows: tuple[tuple[int, int, str], ...]  # (anchor_idx, positive_idx, group)
    short: bool = False


def compose_group_batch(
    groups: Sequence[str], batch_size: int, cursor: GroupCursor
) -> tuple[GroupBatch, GroupCursor]:
    """Compose one anchor/positive batch with pairwise-distinct groups.

    ``groups`` is the group label of each stream position (sorted so equal
    labels are adjacent). Rows whose group is already in the batch, or whose
    group has no second unconsumed member in view, are skipped and revisited
    later. One consumption reset (epoch wrap) is allowed per call; if the
    stream still cannot fill the batch it is returned short and flagged.
    """
    n = len(groups)
    if n == 0:
        return GroupBatch(rows=(), short=True), cursor
    consumed = set(cursor.consumed)
    position = cursor.position
    epoch = cursor.epoch
    rows: list[tuple[int, int, str]] = []
    in_batch: set[str] = set()
    did_reset = False

    while len(rows) < batch_size:
        progressed = False
        for off in range(n):
            p = (position + off) % n
            if p in consumed or groups[p] in in_batch:
                continue
            q = None
            for p2 in range(p + 1, n):
                if p2 not in consumed and groups[p2] == groups[p]:
                    q = p2
                    break
            if q is None:
                continue  # no unconsumed partner; revisit after epoch wrap
            consumed.add(p)
            consumed.add(q)
            rows.append((p, q, groups[p]))
            in_batch.add(groups[p])
            position = (p + 1) % n
            progressed = True
            if len(rows) == batch_size:
                break
        if len(rows) == batch_size:
            break
        if len(consumed) == n:
            consumed.clear()
            position = 0
            epoch += 1
            did_reset = True
            continue
        if not progressed:
            if did_reset:
                break
            consumed.clear()
            position = 0
            epoch += 1
            did_reset = True
    new_cursor = GroupCursor(
        position=position, consumed=frozenset(consumed), epoch=epoch
    )
    return GroupBatch(rows=tuple(rows), short=len(rows) < batch_size), new_cursor


@dataclass(frozen=True)
class RowCursor:
    position: int = 0
    consumed: frozenset[int] = frozenset()
    epoch: int = 0


def compose_row_batch(
    groups: Sequence[str] | None,
    n_rows: int,
    batch_size: int,
    cursor: RowCursor,
) -> tuple[tuple[int, ...], bool, RowCursor]:
    """Select batch rows from a pre-paired dataset, one per group.

    With ``groups=None`` every row is its own group (plain sequential wrap).
    Returns (row indices, short flag, new cursor).
    """
    if n_rows == 0:
        return (), True, cursor
    if groups is None:
        rows = tuple((cursor.position + j) % n_rows for j in range(batch_size))
        return rows, False, replace(cursor, position=(cursor.position + batch_size) % n_rows)

    consumed = set(cursor.consumed)
    position = cursor.position
    epoch = cursor.epoch
    picked: list[int] = []
    in_batch: set[str] = set()
    did_reset = False
    while len(picked) < batch_size:
        progressed = False
        for off in range(n_rows):
            p = (position + off) % n_rows
            if p in consumed or groups[p] in in_batch:
                continue
            consumed.add(p)
            picked.append(p)
            in_batch.add(groups[p])
            position = (p + 1) % n_rows
            progressed = True
            if len(picked) == batch_size:
                break
        if len(picked) == batch_size:
            break
        if len(consumed) == n_rows:
            consumed.clear()
            position = 0
            epoch += 1
            did_reset = True
            continue
        if not progressed:
            if did_reset:
                break
            consumed.clear()
            position = 0
            epoch += 1
            did_reset = True
    return (
        tuple(picked),
        len(picked) < batch_size,
        RowCursor(position=position, consumed=frozenset(consumed), epoch=epoch),
    )


# -- full training plans --------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    """What the planner needs to know about one training dataset."""

    name: str
    kind: str  # "grouped" | "pairs" | "scored"
    size: int  # stream length (grouped) or row count
    groups: tuple[str, ...] | None = None  # per-position / per-row labels

    def __post_init__(self):
        if self.kind not in ("grouped", "pairs", "scored"):
            raise SamplerError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "grouped" and self.groups is None:
            raise SamplerError("grouped datasets need group labels")
        if self.groups is not None and len(self.groups) != self.size:
            raise SamplerError("groups length must equal size")


def plan_training_batches(
    specs: Sequence[DatasetSpec],
    batch_size: int,
    max_pairs: int,
    mode: str = "round_robin",
    seed: int = 42,
) -> BatchPlan:
    """Build the full plan: dataset schedule plus composed batch rows.

    Grouped datasets contribute (anchor, positive) index pairs with distinct
    groups per batch; pre-paired datasets contribute group-unique row
    indices; scored datasets contribute sequential rows.
    """
    if mode not in ("round_robin", "proportional"):
        raise SamplerError(f"unknown sampler mode {mode!r}")
    sizes = [s.size for s in specs]
    if mode == "round_robin":
        schedule = round_robin_plan(sizes, batch_size, max_pairs)
    else:
        schedule = proportional_plan(sizes, batch_size, max_pairs, seed)

    gcursors: dict[int, GroupCursor] = {}
    rcursors: dict[int, RowCursor] = {}
    steps = []
    for step in schedule.steps:
        d = step.dataset_index
        spec = specs[d]
        if spec.kind == "grouped":
            batch, gcursors[d] = compose_group_batch(
                spec.groups, batch_size, gcursors.get(d, GroupCursor())
            )
            if not batch.rows:
                continue  # stream has no pairable groups at all
            steps.append(
                PlanStep(
                    dataset_index=d,
                    rows=tuple((a, p) for a, p, _ in batch.rows),
                    short=batch.short,
                )
            )
        elif spec.kind == "pairs":
            rows, short, rcursors[d] = compose_row_batch(
                spec.groups, spec.size, batch_size, rcursors.get(d, RowCursor())
            )
            if not rows:
                continue
            steps.append(PlanStep(dataset_index=d, rows=rows, short=short))
        else:
            rows, short, rcursors[d] = compose_row_batch(
                None, spec.size, batch_size, rcursors.get(d, RowCursor())
            )
            steps.append(PlanStep(dataset_index=d, rows=rows, short=short))
    return BatchPlan(steps=tuple(steps), batch_size=batch_size, seed=seed)
