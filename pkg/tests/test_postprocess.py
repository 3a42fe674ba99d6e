"""Segmentation and key-shot selection against exhaustive oracles."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caan.errors import DimensionError
from caan.postprocess import (
    ShotSegmentation,
    Summary,
    budget_for,
    kts_changepoints,
    knapsack_select,
    mask_to_intervals,
    optimal_segment_costs,
    scores_to_summary,
    segment_scatter_table,
    shot_scores,
)


def best_subset(values, lengths, budget):
    best, best_set = 0.0, ()
    for r in range(len(values) + 1):
        for subset in itertools.combinations(range(len(values)), r):
            if sum(lengths[i] for i in subset) <= budget:
                v = sum(values[i] for i in subset)
                if v > best + 1e-12:
                    best, best_set = v, subset
    return best, best_set


def scatter(x):
    return float(((x - x.mean(axis=0)) ** 2).sum())


def best_partition_cost(x, m):
    n = len(x)
    return min(
        sum(scatter(x[a:b]) for a, b in zip((0, *cuts), (*cuts, n)))
        for cuts in itertools.combinations(range(1, n), m - 1)
    )


# ---------------------------------------------------------------------------
# segmentation types
# ---------------------------------------------------------------------------
def test_shot_segmentation_accessors():
    seg = ShotSegmentation.from_change_points([4, 9], 12)
    assert seg.boundaries == (0, 4, 9, 12)
    assert seg.change_points == (4, 9)
    assert seg.shots == [(0, 4), (4, 9), (9, 12)]
    np.testing.assert_array_equal(seg.lengths, [4, 5, 3])
    assert (seg.n_frames, seg.n_shots) == (12, 3)


@pytest.mark.parametrize("bad", [(1, 5), (0, 5, 5), (0,), (0, 6, 3)])
def test_shot_segmentation_validation(bad):
    with pytest.raises(ValueError):
        ShotSegmentation(bad)


def test_mask_to_intervals():
    assert mask_to_intervals([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert mask_to_intervals([0, 0]) == []


# ---------------------------------------------------------------------------
# knapsack
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("seed", range(40))
def test_knapsack_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 11))
    values, lengths = rng.random(n), rng.integers(1, 15, n)
    budget = int(rng.integers(0, lengths.sum() + 2))
    chosen = knapsack_select(values, lengths, budget)
    assert sum(lengths[i] for i in chosen) <= budget
    assert sum(values[i] for i in chosen) == pytest.approx(best_subset(values, lengths, budget)[0], abs=1e-12)


def test_knapsack_tie_breaks():
    # equal value: fewer frames wins
    assert knapsack_select([1.0, 0.5, 0.5], [4, 1, 1], 4) == (1, 2)
    assert knapsack_select([1.0, 1.0], [3, 2], 3) == (1,)
    # equal value and frames: lexicographically smallest index set
    assert knapsack_select([1.0, 1.0, 1.0], [2, 2, 2], 2) == (0,)


def test_knapsack_edge_cases():
    assert knapsack_select([], [], 5) == ()
    assert knapsack_select([1.0], [3], 0) == ()
    assert knapsack_select([1.0], [6], 5) == ()
    with pytest.raises(DimensionError):
        knapsack_select([1.0], [1, 2], 3)
    with pytest.raises(ValueError):
        knapsack_select([1.0], [0], 3)


@settings(max_examples=150, deadline=None)
@given(
    items=st.lists(st.tuples(st.floats(0, 1), st.integers(1, 30)), min_size=0, max_size=25),
    budget=st.integers(0, 120),
)
def test_knapsack_never_exceeds_budget(items, budget):
    values = [v for v, _ in items]
    lengths = [w for _, w in items]
    chosen = knapsack_select(values, lengths, budget)
    assert list(chosen) == sorted(set(chosen))
    assert sum(lengths[i] for i in chosen) <= budget


@settings(max_examples=100, deadline=None)
@given(
    items=st.lists(st.tuples(st.floats(0, 1), st.integers(1, 12)), min_size=1, max_size=9),
    budget=st.integers(1, 40),
    bump=st.floats(1e-6, 1.0),
    pick=st.integers(0, 100),
)
def test_raising_a_selected_shot_keeps_it(items, budget, bump, pick):
    values = [v for v, _ in items]
    lengths = [w for _, w in items]
    chosen = knapsack_select(values, lengths, budget)
    if not chosen:
        return
    k = chosen[pick % len(chosen)]
    values[k] += bump
    assert k in knapsack_select(values, lengths, budget)


@pytest.mark.parametrize("n,ratio,expected", [(100, 0.15, 15), (20, 0.15, 3), (7, 0.15, 1), (6, 0.15, 0), (128, 0.15, 19)])
def test_budget_uses_floor(n, ratio, expected):
    assert budget_for(n, ratio) == expected


# ---------------------------------------------------------------------------
# kernel temporal segmentation
# ---------------------------------------------------------------------------
def test_scatter_table_matches_direct(rng):
    x = rng.standard_normal((9, 3))
    table = segment_scatter_table(x)
    for i in range(9):
        for j in range(i + 1, 10):
            assert table[i, j] == pytest.approx(scatter(x[i:j]), abs=1e-10)


@pytest.mark.parametrize("seed", range(12))
def test_dp_cost_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    x = rng.standard_normal((n, int(rng.integers(1, 4))))
    costs, _ = optimal_segment_costs(x, 4)
    for m in range(1, 5):
        assert costs[m] == pytest.approx(best_partition_cost(x, m), rel=1e-9, abs=1e-9)


def test_constant_sequence_is_one_segment():
    assert kts_changepoints(np.ones((30, 4)), 6, penalty=0.1).boundaries == (0, 30)


@pytest.mark.parametrize("split", [3, 10, 17])
def test_two_level_boundary_recovered(split):
    x = np.zeros((24, 2))
    x[split:] = [1.0, -0.5]
    assert kts_changepoints(x, 4).boundaries == (0, split, 24)


def test_penalty_controls_segment_count(rng):
    x = np.repeat(rng.standard_normal((4, 16)), 10, axis=0) + 0.05 * rng.standard_normal((40, 16))
    assert kts_changepoints(x, 8).n_shots == 4
    assert kts_changepoints(x, 8, penalty=1e6).n_shots == 1
    assert kts_changepoints(x, 3).n_shots <= 3


# ---------------------------------------------------------------------------
# scores to summary
# ---------------------------------------------------------------------------
def test_shot_scores_are_means():
    seg = ShotSegmentation((0, 2, 5))
    np.testing.assert_allclose(shot_scores([1, 3, 0, 0, 3], seg), [2.0, 1.0])
    with pytest.raises(DimensionError):
        shot_scores([1, 2], seg)


def test_planted_shots_selected():
    seg = ShotSegmentation((0, 10, 13, 30, 34, 60, 100))
    scores = np.full(100, 0.1)
    scores[10:13] = 0.9
    scores[30:34] = 0.8
    summary = scores_to_summary(None, scores, seg)
    assert summary.budget_frames == 15
    assert summary.selected_shots == (1, 3)
    assert summary.intervals() == [(10, 13), (30, 34)]


def test_length_weighting_changes_the_value():
    seg = ShotSegmentation((0, 2, 12, 16))
    scores = np.r_[np.full(2, 0.9), np.full(10, 0.4), np.full(4, 0.5)]
    # budget 12: shot means favour {0, 2}, mean x length favours {0, 1}
    assert scores_to_summary(None, scores, seg, ratio=0.75).selected_shots == (0, 2)
    assert scores_to_summary(None, scores, seg, ratio=0.75, length_weighted=True).selected_shots == (0, 1)


@pytest.mark.parametrize("seed", range(5))
def test_summary_respects_budget_and_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((90, 6))
    s = rng.random(90)
    a, b = scores_to_summary(x, s), scores_to_summary(x, s)
    assert a.n_selected <= budget_for(90)
    np.testing.assert_array_equal(a.frame_mask, b.frame_mask)
    assert isinstance(a, Summary) and a.segmentation == b.segmentation
