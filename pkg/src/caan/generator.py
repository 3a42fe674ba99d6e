"""Convolutional-attentive generator: FCSN encoder-decoder plus attention scorer."""
from __future__ import annotations

import numpy as np

from . import functional as fn
from .errors import DegenerateInputError, DimensionError
from .optim import materialize
from .tensor import Tensor, concat, getitem, pad_rows, reshape

CANONICAL_CHANNELS = (64, 128, 256, 512, 1024)
CONV_WIDTH = 3
DECONV_WIDTH = 4
TIME_MULTIPLE = 16
# four halvings must leave at least two frames for temporal batch norm
MIN_PADDED_LENGTH = 32


def padded_length(n_frames: int) -> int:
    padded = -(-n_frames // TIME_MULTIPLE) * TIME_MULTIPLE
    return max(padded, MIN_PADDED_LENGTH)


class GeneratorParams:
    """All trainable generator weights, keyed by a stable dotted name."""

    def __init__(self, d: int, channels=CANONICAL_CHANNELS, score_hidden: int = 1024, tensors=None):
        channels = tuple(int(c) for c in channels)
        if len(channels) != 5:
            raise ValueError(f"channel schedule needs 5 entries (stem + 4 encoder stages), got {channels}")
        self.d = int(d)
        self.channels = channels
        self.score_hidden = int(score_hidden)
        self.tensors: dict[str, Tensor] = tensors if tensors is not None else {}

    @staticmethod
    def layout(d, channels=CANONICAL_CHANNELS, score_hidden=1024):
        """Ordered ``(name, shape, init_kind, fan_in)`` for every parameter."""
        c = tuple(int(x) for x in channels)
        out = []

        def double_conv(prefix, c_in, c_out):
            out.append((f"{prefix}.conv1.w", (CONV_WIDTH, c_in, c_out), "uniform", CONV_WIDTH * c_in))
            out.append((f"{prefix}.bn1.gamma", (c_out,), "ones", 0))
            out.append((f"{prefix}.bn1.beta", (c_out,), "zeros", 0))
            out.append((f"{prefix}.conv2.w", (CONV_WIDTH, c_out, c_out), "uniform", CONV_WIDTH * c_out))
            out.append((f"{prefix}.bn2.gamma", (c_out,), "ones", 0))
            out.append((f"{prefix}.bn2.beta", (c_out,), "zeros", 0))

        double_conv("enc0", d, c[0])
        for i in range(1, 5):
            double_conv(f"enc{i}", c[i - 1], c[i])
        for i in range(3, -1, -1):
            # upsample c[i+1] -> c[i]; kernel stored as (w, C_out, C_in) of the adjoint conv
            out.append((f"dec{i}.up.w", (DECONV_WIDTH, c[i], c[i + 1]), "uniform", DECONV_WIDTH * c[i + 1]))
            double_conv(f"dec{i}", 2 * c[i], c[i])
        out.append(("out.w", (c[0], d), "uniform", c[0]))
        out.append(("out.b", (d,), "zeros", 0))
        for name in ("wq", "wk", "wv"):
            out.append((f"attn.{name}", (d, d), "uniform", d))
        out.append(("attn.ln.gamma", (d,), "ones", 0))
        out.append(("attn.ln.beta", (d,), "zeros", 0))
        out.append(("head.w1", (d, score_hidden), "uniform", d))
        out.append(("head.b1", (score_hidden,), "zeros", 0))
        out.append(("head.w2", (score_hidden, 1), "uniform", score_hidden))
        out.append(("head.b2", (1,), "zeros", 0))
        return out

    @classmethod
    def init(cls, d, channels=CANONICAL_CHANNELS, score_hidden=1024, seed=0, dtype=np.float32):
        p = cls(d, channels, score_hidden)
        p.tensors = materialize(cls.layout(d, channels, score_hidden), seed, dtype)
        return p

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def named_parameters(self):
        return list(self.tensors.items())

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def count_parameters(d: int, channels=CANONICAL_CHANNELS, score_hidden: int = 1024) -> int:
    """Closed-form parameter count for a generator configuration."""
    c = tuple(channels)

    def double_conv(c_in, c_out):
        return CONV_WIDTH * c_in * c_out + CONV_WIDTH * c_out * c_out + 4 * c_out

    total = double_conv(d, c[0]) + sum(double_conv(c[i - 1], c[i]) for i in range(1, 5))
    total += sum(DECONV_WIDTH * c[i] * c[i + 1] + double_conv(2 * c[i], c[i]) for i in range(4))
    total += c[0] * d + d
    total += 3 * d * d + 2 * d
    total += d * score_hidden + score_hidden + score_hidden + 1
    return total


def _as_input(x, params: GeneratorParams) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x, dtype=params.dtype)
    if x.ndim != 2:
        raise DimensionError(f"feature sequence must be F x d, got shape {x.shape}")
    return x


def _double_conv(x: Tensor, params: GeneratorParams, prefix: str) -> Tensor:
    for k in ("1", "2"):
        x = fn.conv1d_temporal(x, params[f"{prefix}.conv{k}.w"], stride=1, padding=CONV_WIDTH // 2)
        x = fn.norm_layer(x, params[f"{prefix}.bn{k}.gamma"], params[f"{prefix}.bn{k}.beta"], axis="temporal")
        x = fn.relu(x)
    return x


def fcsn_forward(x, params: GeneratorParams) -> Tensor:
    """Map an F x d feature sequence to a refined F x d sequence."""
    x = _as_input(x, params)
    n_frames, d = x.shape
    if n_frames < 2:
        raise DegenerateInputError(f"need at least 2 frames, got {n_frames}")
    if d != params.d:
        raise DimensionError(f"feature dimension {d} does not match generator d={params.d}")
    h = pad_rows(x, padded_length(n_frames) - n_frames)

    skips = [_double_conv(h, params, "enc0")]
    for i in range(1, 5):
        skips.append(_double_conv(fn.max_pool1d(skips[-1], 2, 2), params, f"enc{i}"))
    h = skips[4]
    for i in range(3, -1, -1):
        up = fn.transposed_conv1d_temporal(h, params[f"dec{i}.up.w"], stride=2, padding=1)
        h = _double_conv(concat([up, skips[i]], axis=1), params, f"dec{i}")
    y = fn.linear(h, params["out.w"], params["out.b"])
    return getitem(y, slice(0, n_frames))


def attention_forward(x, y, params: GeneratorParams, return_weights: bool = False):
    """Score frames by attending from appearance features to refined features.

    Returns ``(scores, attended)`` where scores has length F and ``attended``
    is the F x d attention output before the residual; with
    ``return_weights`` the F x F attention matrix is appended.
    """
    x = _as_input(x, params)
    y = _as_input(y, params)
    if x.shape != y.shape:
        raise DimensionError(f"attention: X {x.shape} and Y {y.shape} must match")
    d = x.shape[1]
    q = x @ params["attn.wq"]
    k = y @ params["attn.wk"]
    v = y @ params["attn.wv"]
    weights = fn.softmax_rows((q @ k.T) * (1.0 / np.sqrt(d)))
    h = weights @ v
    z = fn.norm_layer(h + x, params["attn.ln.gamma"], params["attn.ln.beta"], axis="feature")
    z = fn.relu(fn.linear(z, params["head.w1"], params["head.b1"]))
    logits = fn.linear(z, params["head.w2"], params["head.b2"])
    scores = fn.sigmoid(reshape(logits, (x.shape[0],)))
    if return_weights:
        return scores, h, weights
    return scores, h


def weighted_features(x, scores) -> Tensor:
    """Scale each frame's feature row by its importance score."""
    if not isinstance(x, Tensor):
        x = Tensor(x, dtype=scores.dtype if isinstance(scores, Tensor) else None)
    if not isinstance(scores, Tensor):
        scores = Tensor(scores, dtype=x.dtype)
    if scores.ndim != 1 or x.ndim != 2 or scores.shape[0] != x.shape[0]:
        raise DimensionError(f"weighted_features: scores {scores.shape} vs features {x.shape}")
    return x * reshape(scores, (scores.shape[0], 1))


def generate(x, params: GeneratorParams):
    """Full generator pass: returns ``(scores, weighted_features)``."""
    x = _as_input(x, params)
    y = fcsn_forward(x, params)
    scores, _ = attention_forward(x, y, params)
    return scores, weighted_features(x, scores)
