"""Feature/annotation file formats, synthetic datasets and split assembly.

Feature files (``<id>.feat``) are binary::

    b"CAAN" 0x01            magic + format version
    uint32 F, uint32 d      little-endian
    F*d float32             little-endian, row-major

Annotation sidecars (``<id>.json``) are JSON objects with keys ``id``,
``n_frames`` and the optional ``gt_scores`` (F floats in [0, 1]),
``user_summaries`` (one list of half-open ``[start, end)`` intervals per user)
and ``change_points`` (shot boundaries ``[0, b_1, ..., F]``).

A dataset directory holds one feature file and one sidecar per video plus
``dataset.json`` with the dataset name, its multi-user aggregation mode and
the ordered list of video ids.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CaanError, ConfigurationError, LeakError
from .postprocess import ShotSegmentation, scores_to_summary

FEATURE_MAGIC = b"CAAN"
FEATURE_VERSION = 1
FEATURE_SUFFIX = ".feat"
ANNOTATION_SUFFIX = ".json"
DATASET_FILE = "dataset.json"


class FormatError(CaanError, ValueError):
    """Base class for malformed input files."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class TrailingBytesError(FormatError):
    pass


class NonFiniteFeatureError(FormatError):
    pass


class AnnotationError(FormatError):
    pass


class ScoreRangeError(AnnotationError):
    pass


class IntervalBoundsError(AnnotationError):
    pass


class IntervalOverlapError(AnnotationError):
    pass


class SegmentationError(AnnotationError):
    pass


@dataclass
class VideoRecord:
    id: str
    features: np.ndarray
    gt_scores: np.ndarray | None = None
    user_summaries: list | None = None  # per user: list of (start, end)
    change_points: ShotSegmentation | None = None

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    def user_masks(self) -> list[np.ndarray]:
        masks = []
        for intervals in self.user_summaries or []:
            m = np.zeros(self.n_frames, dtype=bool)
            for a, b in intervals:
                m[a:b] = True
            masks.append(m)
        return masks


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------
def feature_bytes(features) -> bytes:
    x = np.asarray(features, dtype="<f4")
    if x.ndim != 2:
        raise ValueError(f"features must be F x d, got shape {x.shape}")
    return FEATURE_MAGIC + bytes([FEATURE_VERSION]) + struct.pack("<II", *x.shape) + x.tobytes()


def save_features(path, features) -> Path:
    path = Path(path)
    path.write_bytes(feature_bytes(features))
    return path


def parse_features(data: bytes, source="<bytes>") -> np.ndarray:
    header = len(FEATURE_MAGIC) + 1 + 8
    if len(data) < len(FEATURE_MAGIC) or data[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(data) < len(FEATURE_MAGIC) + 1 or data[len(FEATURE_MAGIC)] != FEATURE_VERSION:
        found = data[len(FEATURE_MAGIC)] if len(data) > len(FEATURE_MAGIC) else None
        raise VersionMismatchError(f"{source}: format version {found}, expected {FEATURE_VERSION}")
    if len(data) < header:
        raise TruncatedPayloadError(f"{source}: header cut short at {len(data)} bytes")
    n_frames, dim = struct.unpack("<II", data[len(FEATURE_MAGIC) + 1 : header])
    expected = 4 * n_frames * dim
    payload = len(data) - header
    if payload < expected:
        raise TruncatedPayloadError(
            f"{source}: header says {n_frames}x{dim} ({expected} bytes) but payload has {payload}"
        )
    if payload > expected:
        raise TrailingBytesError(f"{source}: {payload - expected} bytes after the {n_frames}x{dim} payload")
    x = np.frombuffer(data, dtype="<f4", count=n_frames * dim, offset=header).reshape(n_frames, dim)
    bad = np.argwhere(~np.isfinite(x))
    if len(bad):
        f, c = bad[0]
        raise NonFiniteFeatureError(f"{source}: non-finite value at frame {f}, dim {c}")
    return x.astype(np.float32)


def load_features(path) -> np.ndarray:
    path = Path(path)
    return parse_features(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# annotation sidecars
# ---------------------------------------------------------------------------
def annotation_dict(record: VideoRecord) -> dict:
    out = {"id": record.id, "n_frames": record.n_frames}
    if record.gt_scores is not None:
        out["gt_scores"] = [float(v) for v in record.gt_scores]
    if record.user_summaries is not None:
        out["user_summaries"] = [[[int(a), int(b)] for a, b in user] for user in record.user_summaries]
    if record.change_points is not None:
        out["change_points"] = list(record.change_points.boundaries)
    return out


def save_annotations(path, record: VideoRecord) -> Path:
    path = Path(path)
    path.write_text(json.dumps(annotation_dict(record), indent=1) + "\n")
    return path


def validate_annotations(data: dict, n_frames: int | None = None, source="<annotations>") -> dict:
    """Check sidecar content and convert it to typed fields. Never repairs."""
    if not isinstance(data, dict):
        raise AnnotationError(f"{source}: top level must be an object")
    if n_frames is None:
        n_frames = data.get("n_frames")
    if not isinstance(n_frames, int) or n_frames < 1:
        raise AnnotationError(f"{source}: n_frames must be a positive integer, got {n_frames!r}")
    if "n_frames" in data and data["n_frames"] != n_frames:
        raise AnnotationError(f"{source}: n_frames {data['n_frames']} does not match features ({n_frames})")
    out = {"id": data.get("id"), "gt_scores": None, "user_summaries": None, "change_points": None}

    if data.get("gt_scores") is not None:
        s = np.asarray(data["gt_scores"], dtype=np.float64)
        if s.shape != (n_frames,):
            raise AnnotationError(f"{source}: gt_scores has {s.size} entries, expected {n_frames}")
        bad = np.flatnonzero(~np.isfinite(s) | (s < 0) | (s > 1))
        if len(bad):
            raise ScoreRangeError(f"{source}: gt_scores[{bad[0]}] = {s[bad[0]]} outside [0, 1]")
        out["gt_scores"] = s

    if data.get("user_summaries") is not None:
        users = []
        for u, intervals in enumerate(data["user_summaries"]):
            spans = []
            for k, pair in enumerate(intervals):
                if len(pair) != 2:
                    raise AnnotationError(f"{source}: user {u} interval {k} is not a [start, end) pair")
                a, b = int(pair[0]), int(pair[1])
                if not (0 <= a < b <= n_frames):
                    raise IntervalBoundsError(
                        f"{source}: user {u} interval {k} [{a}, {b}) outside [0, {n_frames})"
                    )
                spans.append((a, b))
            ordered = sorted(spans)
            for (a1, b1), (a2, b2) in zip(ordered, ordered[1:]):
                if a2 < b1:
                    raise IntervalOverlapError(f"{source}: user {u} intervals [{a1}, {b1}) and [{a2}, {b2}) overlap")
            users.append(ordered)
        out["user_summaries"] = users

    if data.get("change_points") is not None:
        b = list(data["change_points"])
        try:
            seg = ShotSegmentation(tuple(int(v) for v in b))
        except ValueError as exc:
            raise SegmentationError(f"{source}: change_points: {exc}") from None
        if seg.n_frames != n_frames:
            raise SegmentationError(f"{source}: change_points end at {seg.n_frames}, expected {n_frames}")
        out["change_points"] = seg
    return out


def load_annotations(path, n_frames: int | None = None) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: invalid JSON ({exc})") from None
    return validate_annotations(data, n_frames, str(path))


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------
@dataclass
class Dataset:
    name: str
    videos: list
    eval_mode: str = "max"

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.videos]

    def __len__(self):
        return len(self.videos)


def save_dataset(directory, dataset: Dataset) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in dataset.videos:
        save_features(directory / f"{rec.id}{FEATURE_SUFFIX}", rec.features)
        save_annotations(directory / f"{rec.id}{ANNOTATION_SUFFIX}", rec)
    meta = {"name": dataset.name, "eval_mode": dataset.eval_mode, "videos": dataset.ids, "format_version": 1}
    (directory / DATASET_FILE).write_text(json.dumps(meta, indent=1) + "\n")
    return directory


def load_video(directory, video_id: str) -> VideoRecord:
    directory = Path(directory)
    feats = load_features(directory / f"{video_id}{FEATURE_SUFFIX}")
    ann_path = directory / f"{video_id}{ANNOTATION_SUFFIX}"
    ann = load_annotations(ann_path, feats.shape[0]) if ann_path.exists() else {}
    return VideoRecord(
        id=video_id,
        features=feats,
        gt_scores=ann.get("gt_scores"),
        user_summaries=ann.get("user_summaries"),
        change_points=ann.get("change_points"),
    )


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / DATASET_FILE
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        ids = meta["videos"]
        name = meta.get("name", directory.name)
        mode = meta.get("eval_mode", "max")
    else:
        ids = sorted(p.stem for p in directory.glob(f"*{FEATURE_SUFFIX}"))
        name, mode = directory.name, "max"
    if mode not in ("max", "mean"):
        raise ConfigurationError(f"{meta_path}: eval_mode must be 'max' or 'mean', got {mode!r}")
    if not ids:
        raise ConfigurationError(f"{directory}: no videos found")
    return Dataset(name=name, videos=[load_video(directory, i) for i in ids], eval_mode=mode)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------
@dataclass
class SyntheticSpec:
    """Planted-structure stand-in for a benchmark dataset.

    Each video is piecewise constant: every segment repeats one prototype
    vector plus Gaussian noise. Important segments draw prototypes at unit
    scale, the rest at ``background_scale``, so importance is visible in the
    features without labels.
    """

    n_videos: int = 20
    frames: tuple = (96, 160)
    d: int = 64
    segments: tuple = (6, 12)
    important_fraction: float = 0.3
    noise: float = 0.1
    seed: int = 0
    background_scale: float = 0.25
    min_segment: int = 4
    n_users: int = 3
    user_jitter: float = 0.05
    ratio: float = 0.15
    name: str = "synthetic"
    eval_mode: str = "mean"

    def __post_init__(self):
        self.frames = tuple(int(v) for v in self.frames)
        self.segments = tuple(int(v) for v in self.segments)
        self.validate()

    def validate(self):
        if self.n_videos < 1:
            raise ConfigurationError(f"n_videos must be >= 1, got {self.n_videos}")
        lo, hi = self.frames
        s_lo, s_hi = self.segments
        if not 2 <= lo <= hi:
            raise ConfigurationError(f"frame range must satisfy 2 <= min <= max, got {self.frames}")
        if not 1 <= s_lo <= s_hi:
            raise ConfigurationError(f"segment range must satisfy 1 <= min <= max, got {self.segments}")
        if s_hi * self.min_segment > lo:
            raise ConfigurationError(
                f"{s_hi} segments of >= {self.min_segment} frames do not fit in {lo} frames"
            )
        if not 0.0 < self.important_fraction < 1.0:
            raise ConfigurationError(f"important_fraction must lie in (0, 1), got {self.important_fraction}")
        if self.noise < 0:
            raise ConfigurationError(f"noise sigma must be >= 0, got {self.noise}")
        if self.d < 1 or self.n_users < 0 or self.user_jitter < 0 or self.background_scale < 0:
            raise ConfigurationError("d must be positive; n_users, user_jitter, background_scale non-negative")
        if self.eval_mode not in ("max", "mean"):
            raise ConfigurationError(f"eval_mode must be 'max' or 'mean', got {self.eval_mode!r}")


def _synth_video(rng: np.random.Generator, spec: SyntheticSpec, video_id: str) -> VideoRecord:
    n = int(rng.integers(spec.frames[0], spec.frames[1] + 1))
    n_seg = int(rng.integers(spec.segments[0], spec.segments[1] + 1))
    spare = n - n_seg * spec.min_segment
    lengths = spec.min_segment + rng.multinomial(spare, np.full(n_seg, 1.0 / n_seg))
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    n_imp = max(1, int(round(spec.important_fraction * n_seg)))
    important = np.zeros(n_seg, dtype=bool)
    important[rng.choice(n_seg, size=n_imp, replace=False)] = True

    protos = rng.standard_normal((n_seg, spec.d))
    protos[~important] *= spec.background_scale
    seg_of_frame = np.repeat(np.arange(n_seg), lengths)
    feats = protos[seg_of_frame] + spec.noise * rng.standard_normal((n, spec.d))

    frame_imp = important[seg_of_frame]
    gt = np.where(frame_imp, rng.uniform(0.8, 1.0, n), rng.uniform(0.0, 0.2, n))
    seg = ShotSegmentation(tuple(int(b) for b in bounds))
    users = []
    for _ in range(spec.n_users):
        noisy = np.clip(gt + spec.user_jitter * rng.standard_normal(n), 0.0, 1.0)
        users.append(scores_to_summary(None, noisy, seg, ratio=spec.ratio).intervals())
    return VideoRecord(
        id=video_id,
        features=feats.astype(np.float32),
        gt_scores=gt,
        user_summaries=users,
        change_points=seg,
    )


def gen_synthetic(spec: SyntheticSpec) -> list[VideoRecord]:
    """Deterministic function of ``spec`` (seed included)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    return [_synth_video(rng, spec, f"{spec.name}_{i:03d}") for i in range(spec.n_videos)]


def synthetic_dataset(spec: SyntheticSpec) -> Dataset:
    return Dataset(name=spec.name, videos=gen_synthetic(spec), eval_mode=spec.eval_mode)


# ---------------------------------------------------------------------------
# split assembly
# ---------------------------------------------------------------------------
@dataclass
class Split:
    train: list
    test: list
    fold: int | None = None

    def check_leak(self):
        overlap = {v.id for v in self.train} & {v.id for v in self.test}
        if overlap:
            raise LeakError(f"video ids in both train and test: {sorted(overlap)}")


def assemble_split(mode: str, target: list, auxiliary=(), seed: int = 0, k: int = 5) -> list[Split]:
    """Train/test video lists per fold for the canonical, augmented or transfer setting.

    ``auxiliary`` is a list of extra video lists (other datasets). Canonical
    and augmented use k-fold cross-validation on ``target``; augmented adds
    every auxiliary video to each fold's training set; transfer trains on
    all auxiliary videos and tests on all of ``target``.
    """
    from .evaluation import make_folds

    extra = [v for group in auxiliary for v in group]
    if mode == "transfer":
        if not extra:
            raise ConfigurationError("transfer mode needs at least one auxiliary dataset")
        splits = [Split(train=list(extra), test=list(target))]
    elif mode in ("canonical", "augmented"):
        if mode == "augmented" and not extra:
            raise ConfigurationError("augmented mode needs at least one auxiliary dataset")
        plan = make_folds([v.id for v in target], k=k, seed=seed)
        by_id = {v.id: v for v in target}
        splits = []
        for i, test_ids in enumerate(plan.folds):
            held = set(test_ids)
            train = [by_id[j] for j in plan.ids if j not in held]
            if mode == "augmented":
                train += extra
            splits.append(Split(train=train, test=[by_id[j] for j in test_ids], fold=i))
    else:
        raise ConfigurationError(f"unknown split mode {mode!r}; expected canonical, augmented or transfer")
    for s in splits:
        s.check_leak()
    return splits
