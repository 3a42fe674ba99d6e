"""Summary F-score, rank correlations and the k-fold cross-validation harness."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, DimensionError, LeakError, UndefinedCorrelationError
from .postprocess import Summary, scores_to_summary

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# F-score
# ---------------------------------------------------------------------------
def _mask(summary) -> np.ndarray:
    if isinstance(summary, Summary):
        return np.asarray(summary.frame_mask, dtype=bool)
    return np.asarray(summary, dtype=bool)


def fscore(pred, gt) -> tuple[float, float, float]:
    """Precision, recall and F-score (percent) of frame overlap.

    ``pred`` and ``gt`` are :class:`Summary` objects or boolean frame masks.
    An empty side gives P or R of 0 and F of 0.
    """
    p, g = _mask(pred), _mask(gt)
    if p.shape != g.shape:
        raise DimensionError(f"fscore: summaries cover {p.size} and {g.size} frames")
    overlap = int(np.count_nonzero(p & g))
    n_pred, n_gt = int(p.sum()), int(g.sum())
    precision = overlap / n_pred if n_pred else 0.0
    recall = overlap / n_gt if n_gt else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall) * 100.0


def fscore_multi_user(pred, users, mode: str = "max") -> tuple[float, float, float]:
    """Combine per-user scores by ``max`` or ``mean``.

    With ``max`` the (P, R) of the best-matching user are returned; with
    ``mean`` all three values are averaged.
    """
    if mode not in ("max", "mean"):
        raise ConfigurationError(f"mode must be 'max' or 'mean', got {mode!r}")
    users = list(users)
    if not users:
        raise DegenerateInputError("fscore_multi_user needs at least one user summary")
    per_user = [fscore(pred, u) for u in users]
    if mode == "max":
        return max(per_user, key=lambda t: t[2])
    arr = np.array(per_user)
    return tuple(float(v) for v in arr.mean(axis=0))


# ---------------------------------------------------------------------------
# rank correlations
# ---------------------------------------------------------------------------
def _check_pair(a, b, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"{name}: inputs have lengths {a.size} and {b.size}")
    if a.size < 2:
        raise DegenerateInputError(f"{name} needs at least 2 values, got {a.size}")
    return a, b


def kendall_tau(a, b, chunk: int = 512) -> float:
    """Tie-corrected Kendall tau-b over all pairs, O(n^2) in row chunks."""
    a, b = _check_pair(a, b, "kendall_tau")
    n = a.size
    concordance = 0.0
    untied_a = untied_b = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sa = np.sign(a[start:stop, None] - a[None, :])
        sb = np.sign(b[start:stop, None] - b[None, :])
        # keep pairs (i, j) with j > i once
        upper = np.arange(start, stop)[:, None] < np.arange(n)[None, :]
        concordance += float((sa * sb)[upper].sum())
        untied_a += int(np.count_nonzero(sa[upper]))
        untied_b += int(np.count_nonzero(sb[upper]))
    if untied_a == 0 or untied_b == 0:
        raise UndefinedCorrelationError("kendall_tau is undefined when one input is constant")
    return float(np.clip(concordance / math.sqrt(untied_a * untied_b), -1.0, 1.0))


def mid_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the average of their positions."""
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    start = 0
    for end in range(1, v.size + 1):
        if end == v.size or sorted_v[end] != sorted_v[start]:
            ranks[order[start:end]] = (start + end + 1) / 2.0
            start = end
    return ranks


def spearman_rho(a, b) -> float:
    a, b = _check_pair(a, b, "spearman_rho")
    ra, rb = mid_ranks(a), mid_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        raise UndefinedCorrelationError("spearman_rho is undefined when one input has zero rank variance")
    return float(np.clip(float(ra @ rb) / den, -1.0, 1.0))


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # k tuples of video ids
    seed: int
    ids: tuple  # original id order

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_ids(self, fold: int) -> list:
        held = set(self.folds[fold])
        return [i for i in self.ids if i not in held]


def make_folds(ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle of ``ids`` cut into ``k`` folds whose sizes differ by at most 1."""
    ids = tuple(ids)
    if len(set(ids)) != len(ids):
        raise ConfigurationError("video ids must be unique")
    if len(ids) < k:
        raise ConfigurationError(f"{k}-fold cross-validation needs at least {k} videos, got {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    folds = tuple(tuple(ids[j] for j in part) for part in np.array_split(perm, k))
    return FoldPlan(folds=folds, seed=seed, ids=ids)


def fold_seed(base: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(base), int(fold)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------
@dataclass
class VideoEval:
    id: str
    fold: int | None
    precision: float | None
    recall: float | None
    fscore: float | None
    kendall_tau: float | None
    spearman_rho: float | None


def _nanmean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class EvalReport:
    videos: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def precision(self):
        return _nanmean(v.precision for v in self.videos)

    @property
    def recall(self):
        return _nanmean(v.recall for v in self.videos)

    @property
    def fscore(self):
        return _nanmean(v.fscore for v in self.videos)

    @property
    def kendall_tau(self):
        return _nanmean(v.kendall_tau for v in self.videos)

    @property
    def spearman_rho(self):
        return _nanmean(v.spearman_rho for v in self.videos)

    def folds(self) -> list:
        return sorted({v.fold for v in self.videos if v.fold is not None})

    def fold_means(self) -> dict:
        out = {}
        for f in self.folds():
            sub = EvalReport([v for v in self.videos if v.fold == f])
            out[f] = sub.summary()
        return out

    def summary(self) -> dict:
        return {
            "n_videos": len(self.videos),
            "precision": self.precision,
            "recall": self.recall,
            "fscore": self.fscore,
            "kendall_tau": self.kendall_tau,
            "spearman_rho": self.spearman_rho,
        }

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "overall": self.summary(),
            "folds": {str(k): v for k, v in self.fold_means().items()},
            "videos": [asdict(v) for v in self.videos],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(v), sort_keys=True) + "\n" for v in self.videos)

    def table(self) -> str:
        def fmt(v, spec):
            return "-" if v is None else format(v, spec)

        head = f"{'video':<20} {'fold':>4} {'P':>6} {'R':>6} {'F%':>7} {'tau':>7} {'rho':>7}"
        lines = [head, "-" * len(head)]
        for v in self.videos:
            lines.append(
                f"{v.id:<20} {fmt(v.fold, 'd'):>4} {fmt(v.precision, '.3f'):>6} {fmt(v.recall, '.3f'):>6} "
                f"{fmt(v.fscore, '.2f'):>7} {fmt(v.kendall_tau, '.3f'):>7} {fmt(v.spearman_rho, '.3f'):>7}"
            )
        lines.append("-" * len(head))
        for f, s in self.fold_means().items():
            lines.append(f"{'fold ' + str(f):<20} {'':>4} {fmt(s['precision'], '.3f'):>6} {fmt(s['recall'], '.3f'):>6} "
                         f"{fmt(s['fscore'], '.2f'):>7} {fmt(s['kendall_tau'], '.3f'):>7} {fmt(s['spearman_rho'], '.3f'):>7}")
        s = self.summary()
        lines.append(f"{'mean':<20} {'':>4} {fmt(s['precision'], '.3f'):>6} {fmt(s['recall'], '.3f'):>6} "
                     f"{fmt(s['fscore'], '.2f'):>7} {fmt(s['kendall_tau'], '.3f'):>7} {fmt(s['spearman_rho'], '.3f'):>7}")
        return "\n".join(lines) + "\n"


def _safe_corr(func, a, b):
    try:
        return func(a, b)
    except UndefinedCorrelationError:
        return None


def evaluate_scores(record, scores, fold=None, mode="max", ratio=0.15, length_weighted=False) -> VideoEval:
    """Score one video's predicted frame scores against its annotations."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (record.n_frames,):
        raise DimensionError(f"{record.id}: {scores.size} scores for {record.n_frames} frames")
    summary = scores_to_summary(
        record.features, scores, record.change_points, ratio=ratio, length_weighted=length_weighted
    )
    p = r = f = None
    if record.user_summaries:
        p, r, f = fscore_multi_user(summary, record.user_masks(), mode)
    tau = rho = None
    if record.gt_scores is not None:
        tau = _safe_corr(kendall_tau, scores, record.gt_scores)
        rho = _safe_corr(spearman_rho, scores, record.gt_scores)
    return VideoEval(record.id, fold, p, r, f, tau, rho)


def run_splits(splits, config, mode="max", ratio=0.15, length_weighted=False, trainer=None) -> EvalReport:
    """Train one model per split and evaluate it on that split's test videos.

    Each fold trains with its own seed derived from ``config.seed`` and the
    fold index. ``trainer`` defaults to :func:`caan.training.train`.
    """
    from .training import predict_scores, train

    trainer = trainer or train
    report = EvalReport()
    for i, split in enumerate(splits):
        train_ids = {v.id for v in split.train}
        if train_ids & {v.id for v in split.test}:
            raise LeakError(f"fold {i}: ids in both train and test: {sorted(train_ids & {v.id for v in split.test})}")
        fold = split.fold if split.fold is not None else i
        fold_cfg = replace(config, seed=fold_seed(config.seed, fold))
        result = trainer(split.train, fold_cfg)
        for rec in split.test:
            scores = predict_scores(rec.features, result.generator)
            report.videos.append(evaluate_scores(rec, scores, split.fold, mode, ratio, length_weighted))
        logger.info("fold %d: F=%s", fold, EvalReport([v for v in report.videos if v.fold == split.fold]).fscore)
    return report


def five_fold_cv(dataset, config, seed: int = 0, extra_train=(), mode=None, ratio=0.15, k=5, trainer=None) -> EvalReport:
    """k-fold cross-validation over ``dataset`` (a Dataset or list of VideoRecord).

    ``seed`` fixes the fold assignment; ``extra_train`` (a list of video
    lists) is appended to every fold's training set.
    """
    from .data_io import assemble_split

    videos = list(getattr(dataset, "videos", dataset))
    if mode is None:
        mode = getattr(dataset, "eval_mode", "max")
    if len(videos) < k:
        raise ConfigurationError(f"{k}-fold cross-validation needs at least {k} videos, got {len(videos)}")
    split_mode = "augmented" if any(len(g) for g in extra_train) else "canonical"
    splits = assemble_split(split_mode, videos, extra_train, seed=seed, k=k)
    report = run_splits(splits, config, mode=mode, ratio=ratio, trainer=trainer)
    report.meta = {"setting": split_mode, "fold_seed": seed, "k": k, "mode": mode, "ratio": ratio}
    return report


def random_baseline(videos, n_draws: int = 20, seed: int = 0, mode: str = "max", ratio: float = 0.15) -> float:
    """Mean F-score of uniform random frame scores, averaged over ``n_draws`` draws."""
    rng = np.random.default_rng(seed)
    totals = []
    for _ in range(n_draws):
        per_video = [
            evaluate_scores(v, rng.random(v.n_frames), mode=mode, ratio=ratio).fscore for v in videos
        ]
        totals.append(np.mean([f for f in per_video if f is not None]))
    return float(np.mean(totals))
