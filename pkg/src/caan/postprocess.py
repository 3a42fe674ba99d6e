"""Frame scores to key-shot summary: KTS change points and 0/1 knapsack."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError

SUMMARY_RATIO = 0.15
_TIE = 1e-12


@dataclass(frozen=True)
class ShotSegmentation:
    """Contiguous shots ``[b_i, b_{i+1})`` given by boundaries ``0 = b_0 < ... < b_m = F``."""

    boundaries: tuple

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError(f"boundaries must start at 0 and strictly increase, got {b}")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def from_change_points(cls, change_points, n_frames: int) -> "ShotSegmentation":
        """Build from internal change points (first frame of every shot but the first)."""
        return cls((0, *sorted(int(c) for c in change_points), int(n_frames)))

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1]

    @property
    def n_shots(self) -> int:
        return len(self.boundaries) - 1

    @property
    def change_points(self) -> tuple:
        return self.boundaries[1:-1]

    @property
    def shots(self) -> list[tuple[int, int]]:
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)


@dataclass
class Summary:
    selected_shots: tuple
    frame_mask: np.ndarray
    budget_frames: int
    segmentation: ShotSegmentation | None = None

    @property
    def n_selected(self) -> int:
        return int(self.frame_mask.sum())

    def intervals(self) -> list[tuple[int, int]]:
        """Selected frames as half-open ``(start, end)`` runs."""
        return mask_to_intervals(self.frame_mask)

    @classmethod
    def from_mask(cls, mask) -> "Summary":
        mask = np.asarray(mask, dtype=bool)
        return cls(selected_shots=(), frame_mask=mask, budget_frames=int(mask.sum()))


def mask_to_intervals(mask) -> list[tuple[int, int]]:
    mask = np.asarray(mask, dtype=bool)
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


# ---------------------------------------------------------------------------
# kernel temporal segmentation
# ---------------------------------------------------------------------------
def segment_scatter_table(features) -> np.ndarray:
    """``table[i, j]`` = within-segment scatter of frames ``[i, j)`` under a linear kernel.

    Uses 2-D prefix sums of the Gram matrix so each entry costs O(1).
    """
    x = np.asarray(features, dtype=np.float64)
    gram = x @ x.T
    n = gram.shape[0]
    diag_cum = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    block = np.zeros((n + 1, n + 1))
    block[1:, 1:] = gram.cumsum(axis=0).cumsum(axis=1)
    i = np.arange(n + 1)[:, None]
    j = np.arange(n + 1)[None, :]
    length = np.maximum(j - i, 1)
    inner = block[j, j] - block[i, j] - block[j, i] + block[i, i]
    table = (diag_cum[j] - diag_cum[i]) - inner / length
    table[j <= i] = np.inf
    # clamp round-off below zero
    return np.where(np.isfinite(table), np.maximum(table, 0.0), table)


def optimal_segment_costs(features, max_segments: int):
    """Minimum total scatter for every segment count ``m = 1..max_segments``.

    Returns ``(costs, back)`` where ``costs[m]`` is the optimum with exactly
    m segments (inf when infeasible) and ``back`` allows boundary recovery.
    """
    table = segment_scatter_table(features)
    n = table.shape[0] - 1
    m_max = min(max_segments, n)
    best = np.full((m_max + 1, n + 1), np.inf)
    back = np.zeros((m_max + 1, n + 1), dtype=int)
    best[1, 1:] = table[0, 1:]
    for m in range(2, m_max + 1):
        for end in range(m, n + 1):
            cand = best[m - 1, m - 1 : end] + table[m - 1 : end, end]
            k = int(np.argmin(cand))
            best[m, end] = cand[k]
            back[m, end] = k + m - 1
    return best[:, n], back


def _backtrack(back, m, n):
    bounds = [n]
    end = n
    for k in range(m, 1, -1):
        end = back[k, end]
        bounds.append(end)
    bounds.append(0)
    return tuple(reversed(bounds))


def model_penalty(m: int, n_frames: int) -> float:
    return m * (math.log(n_frames / m) + 1.0)


def default_penalty(features) -> float:
    """Noise-scaled penalty: an estimate of the per-frame noise energy ``d * sigma^2``.

    Half the squared frame-to-frame difference estimates it; the median
    ignores the few jumps at shot boundaries, and the Wilson-Hilferty factor
    corrects the median of a chi-square with d degrees of freedom to its
    mean. A floor relative to the total spread keeps the penalty positive on
    noiseless input. With low-dimensional features (roughly d < 16) on short
    sequences it tends to over-segment; pass an explicit penalty there.
    """
    x = np.asarray(features, dtype=np.float64)
    d = x.shape[1]
    spread = float(((x - x.mean(axis=0)) ** 2).sum(axis=1).mean())
    if x.shape[0] < 2:
        return spread
    jumps = (np.diff(x, axis=0) ** 2).sum(axis=1)
    noise = 0.5 * float(np.median(jumps)) / (1.0 - 2.0 / (9.0 * d)) ** 3
    return max(noise, 1e-9 * spread)


def kts_changepoints(features, max_segments: int, penalty: float | None = None) -> ShotSegmentation:
    """Penalised kernel temporal segmentation with a linear kernel.

    Chooses the segment count m minimising ``cost(m) + penalty*m*(log(F/m)+1)``
    and returns the optimal boundaries for that m.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"features must be F x d, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise DegenerateInputError(f"segmentation needs at least 2 frames, got {n}")
    if max_segments < 1:
        raise ValueError(f"max_segments must be >= 1, got {max_segments}")
    if penalty is None:
        penalty = default_penalty(x)
    costs, back = optimal_segment_costs(x, max_segments)
    objective = [costs[m] + penalty * model_penalty(m, n) for m in range(1, len(costs))]
    m = int(np.argmin(objective)) + 1
    return ShotSegmentation(_backtrack(back, m, n))


def uniform_segmentation(n_frames: int, shot_length: int) -> ShotSegmentation:
    bounds = list(range(0, n_frames, shot_length)) + [n_frames]
    return ShotSegmentation(tuple(bounds))


# ---------------------------------------------------------------------------
# shot scores and knapsack
# ---------------------------------------------------------------------------
def shot_scores(scores, seg: ShotSegmentation) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != seg.n_frames:
        raise DimensionError(f"{s.shape[0] if s.ndim else 0} scores for a {seg.n_frames}-frame segmentation")
    return np.array([s[a:b].mean() for a, b in seg.shots])


def knapsack_select(values, lengths, budget: int) -> tuple:
    """Exact 0/1 knapsack over integer lengths.

    Maximises the summed value subject to total length <= budget. Ties go to
    fewer total frames, then to the lexicographically smallest index set.
    Returns the selected indices in increasing order.
    """
    values = [float(v) for v in values]
    lengths = [int(w) for w in lengths]
    if len(values) != len(lengths):
        raise DimensionError(f"{len(values)} values but {len(lengths)} lengths")
    if any(w <= 0 for w in lengths):
        raise ValueError("shot lengths must be positive integers")
    budget = int(budget)
    if budget <= 0 or not values:
        return ()
    n = len(values)
    # suffix tables: best over items i..n-1 with capacity c
    val = np.zeros((n + 1, budget + 1))
    frames = np.zeros((n + 1, budget + 1), dtype=np.int64)
    take = np.zeros((n, budget + 1), dtype=bool)
    for i in range(n - 1, -1, -1):
        v, w = values[i], lengths[i]
        val[i] = val[i + 1]
        frames[i] = frames[i + 1]
        if w > budget:
            continue
        cand_val = val[i + 1, : budget + 1 - w] + v
        cand_frames = frames[i + 1, : budget + 1 - w] + w
        skip_val = val[i + 1, w:]
        skip_frames = frames[i + 1, w:]
        scale = np.maximum(1.0, np.maximum(np.abs(cand_val), np.abs(skip_val)))
        better = cand_val > skip_val + _TIE * scale
        tied = np.abs(cand_val - skip_val) <= _TIE * scale
        # on equal value prefer fewer frames, then the set containing the smaller index
        better |= tied & (cand_frames <= skip_frames)
        take[i, w:] = better
        val[i, w:] = np.where(better, cand_val, skip_val)
        frames[i, w:] = np.where(better, cand_frames, skip_frames)
    chosen = []
    cap = budget
    for i in range(n):
        if take[i, cap]:
            chosen.append(i)
            cap -= lengths[i]
    return tuple(chosen)


def budget_for(n_frames: int, ratio: float = SUMMARY_RATIO) -> int:
    # the epsilon absorbs representation error such as 0.15 * 20 = 2.9999...
    return int(math.floor(ratio * n_frames + 1e-9))


def scores_to_summary(
    features,
    scores,
    seg: ShotSegmentation | None = None,
    ratio: float = SUMMARY_RATIO,
    length_weighted: bool = False,
    max_segments: int | None = None,
    penalty: float | None = None,
) -> Summary:
    """Select key shots whose total length fits in ``floor(ratio * F)`` frames.

    Shot value is the mean frame score; ``length_weighted`` multiplies it by
    the shot length instead.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    if features is not None and np.asarray(features).shape[0] != n:
        raise DimensionError(f"{np.asarray(features).shape[0]} feature rows but {n} scores")
    if seg is None:
        if features is None:
            raise ValueError("features are required when no segmentation is given")
        seg = kts_changepoints(features, max_segments or max(1, n // 8), penalty)
    if seg.n_frames != n:
        raise DimensionError(f"segmentation covers {seg.n_frames} frames, scores have {n}")
    values = shot_scores(s, seg)
    lengths = seg.lengths
    if length_weighted:
        values = values * lengths
    budget = budget_for(n, ratio)
    picked = knapsack_select(values, lengths, budget)
    mask = np.zeros(n, dtype=bool)
    for k in picked:
        a, b = seg.shots[k]
        mask[a:b] = True
    return Summary(selected_shots=picked, frame_mask=mask, budget_frames=budget, segmentation=seg)
