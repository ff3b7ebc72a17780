import io

import numpy as np
import pytest

from protembed.sampler import (
    DatasetSpec,
    GroupCursor,
    RowCursor,
    SamplerError,
    compose_group_batch,
    compose_row_batch,
    plan_training_batches,
    proportional_plan,
    round_robin_plan,
)


class TestRoundRobin:
    def test_cycle_order(self):
        plan = round_robin_plan([100] * 5, batch_size=4, max_pairs=40)
        assert [s.dataset_index for s in plan.steps] == [0, 1, 2, 3, 4, 0, 1, 2, 3, 4]

    def test_step_counts_within_one(self):
        for t in (7, 23, 101, 1000):
            plan = round_robin_plan([50] * 5, batch_size=1, max_pairs=t)
            counts = plan.dataset_step_counts(5)
            assert sorted(counts) in ([t // 5] * (5 - t % 5) + [t // 5 + 1] * (t % 5),)

    def test_single_dataset_degenerate(self):
        plan = round_robin_plan([10], batch_size=2, max_pairs=8)
        assert [s.dataset_index for s in plan.steps] == [0, 0, 0, 0]
        assert plan.steps[0].rows == (0, 1)
        assert plan.steps[1].rows == (2, 3)

    def test_total_rows_bounded(self):
        plan = round_robin_plan([100, 100], batch_size=7, max_pairs=50)
        assert sum(len(s.rows) for s in plan.steps) <= 50

    def test_epoch_wrap(self):
        plan = round_robin_plan([3], batch_size=2, max_pairs=8)
        assert [s.rows for s in plan.steps] == [(0, 1), (2, 0), (1, 2), (0, 1)]

    def test_zero_size_dataset_skipped(self):
        plan = round_robin_plan([5, 0, 5], batch_size=1, max_pairs=4)
        assert [s.dataset_index for s in plan.steps] == [0, 2, 0, 2]

    def test_no_datasets_rejected(self):
        with pytest.raises(SamplerError):
            round_robin_plan([], 2, 10)


class TestProportional:
    def test_degenerate_distribution(self):
        plan = proportional_plan([1000, 0, 0, 0, 0], batch_size=2, max_pairs=100, seed=1)
        assert {s.dataset_index for s in plan.steps} == {0}

    def test_share_concentration(self):
        plan = proportional_plan([900, 100], batch_size=1, max_pairs=10_000, seed=7)
        counts = plan.dataset_step_counts(2)
        share = counts[0] / 10_000
        assert 0.88 <= share <= 0.92

    def test_same_seed_identical(self):
        a = proportional_plan([10, 20, 30], 2, 100, seed=9)
        b = proportional_plan([10, 20, 30], 2, 100, seed=9)
        assert a == b

    def test_different_seed_differs(self):
        a = proportional_plan([10, 20, 30], 1, 200, seed=1)
        b = proportional_plan([10, 20, 30], 1, 200, seed=2)
        assert a != b


def grouped_stream(groups_with_sizes):
    out = []
    for g, n in groups_with_sizes:
        out.extend([g] * n)
    return out


class TestComposeGroupBatch:
    def test_four_groups_two_members(self):
        groups = grouped_stream([("a", 2), ("b", 2), ("c", 2), ("d", 2)])
        batch, cur = compose_group_batch(groups, 4, GroupCursor())
        assert not batch.short
        assert len(batch.rows) == 4
        assert sorted(g for _, _, g in batch.rows) == ["a", "b", "c", "d"]
        for a, p, g in batch.rows:
            assert a != p and groups[a] == groups[p] == g

    def test_short_batch_flagged(self):
        groups = grouped_stream([("a", 3), ("b", 2)])
        batch, _ = compose_group_batch(groups, 4, GroupCursor())
        assert batch.short
        assert sorted(g for _, _, g in batch.rows) == ["a", "b"]

    def test_singleton_group_skipped(self):
        groups = grouped_stream([("a", 1), ("b", 2)])
        batch, _ = compose_group_batch(groups, 2, GroupCursor())
        assert [g for _, _, g in batch.rows] == ["b"]
        assert batch.short

    def test_no_duplicate_groups_over_long_run(self):
        rng = np.random.default_rng(0)
        sizes = [(f"g{i:03d}", int(rng.integers(1, 7))) for i in range(40)]
        groups = grouped_stream(sizes)
        cur = GroupCursor()
        for _ in range(300):
            batch, cur = compose_group_batch(groups, 8, cur)
            labels = [g for _, _, g in batch.rows]
            assert len(set(labels)) == len(labels)
            for a, p, g in batch.rows:
                assert groups[a] == groups[p] == g and a != p

    def test_epoch_wrap_resets_consumption(self):
        groups = grouped_stream([("a", 2), ("b", 2)])
        cur = GroupCursor()
        seen = []
        for _ in range(4):
            batch, cur = compose_group_batch(groups, 2, cur)
            seen.append(tuple(batch.rows))
            assert len(batch.rows) == 2
        assert cur.epoch >= 1

    def test_empty_stream(self):
        batch, _ = compose_group_batch([], 4, GroupCursor())
        assert batch.rows == () and batch.short


class TestComposeRowBatch:
    def test_sequential_when_ungrouped(self):
        rows, short, cur = compose_row_batch(None, 5, 3, RowCursor())
        assert rows == (0, 1, 2) and not short
        rows, short, cur = compose_row_batch(None, 5, 3, cur)
        assert rows == (3, 4, 0)

    def test_group_unique_selection(self):
        groups = ["x", "x", "y", "y", "z"]
        rows, short, cur = compose_row_batch(groups, 5, 3, RowCursor())
        assert len(rows) == 3
        assert len({groups[r] for r in rows}) == 3

    def test_short_when_groups_exhausted(self):
        groups = ["x", "x", "y"]
        rows, short, _ = compose_row_batch(groups, 3, 3, RowCursor())
        assert short and len(rows) == 2


class TestTrainingPlan:
    def specs(self):
        return [
            DatasetSpec(name="fam", kind="grouped", size=6,
                        groups=("a", "a", "b", "b", "c", "c")),
            DatasetSpec(name="hn", kind="pairs", size=4, groups=("a", "a", "b", "b")),
            DatasetSpec(name="dms", kind="scored", size=5),
        ]

    def test_round_robin_cycles_kinds(self):
        plan = plan_training_batches(self.specs(), batch_size=2, max_pairs=12)
        assert [s.dataset_index for s in plan.steps] == [0, 1, 2, 0, 1, 2]
        assert all(isinstance(r, tuple) and len(r) == 2 for r in plan.steps[0].rows)
        assert all(isinstance(r, int) for r in plan.steps[1].rows)

    def test_mnrl_batches_group_unique(self):
        specs = self.specs()
        plan = plan_training_batches(specs, batch_size=2, max_pairs=60)
        for step in plan.steps:
            spec = specs[step.dataset_index]
            if spec.kind == "grouped":
                labels = [spec.groups[a] for a, _ in step.rows]
            elif spec.kind == "pairs":
                labels = [spec.groups[r] for r in step.rows]
            else:
                continue
            assert len(set(labels)) == len(labels)

    def test_dropping_scored_removes_cosent_steps(self):
        specs = [s for s in self.specs() if s.kind != "scored"]
        plan = plan_training_batches(specs, batch_size=2, max_pairs=20)
        assert all(specs[s.dataset_index].kind != "scored" for s in plan.steps)

    def test_plan_serializes(self):
        plan = plan_training_batches(self.specs(), batch_size=2, max_pairs=12)
        buf = io.StringIO()
        plan.to_jsonl(buf)
        lines = buf.getvalue().strip().split("\n")
        assert len(lines) == len(plan.steps) + 1

    def test_pure_function_of_inputs(self):
        a = plan_training_batches(self.specs(), 2, 24, mode="proportional", seed=3)
        b = plan_training_batches(self.specs(), 2, 24, mode="proportional", seed=3)
        assert a == b

    def test_unknown_kind_rejected(self):
        with pytest.raises(SamplerError):
            DatasetSpec(name="x", kind="weird", size=3)

    def test_grouped_requires_groups(self):
        with pytest.raises(SamplerError):
            DatasetSpec(name="x", kind="grouped", size=3)
