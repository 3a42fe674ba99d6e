"""LSTM discriminator telling original features from score-weighted ones."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as fn
from .errors import DimensionError
from .optim import materialize
from .tensor import Tensor, reshape


class DiscriminatorParams:
    def __init__(self, d: int, hidden: int = 1024, tensors=None):
        self.d = int(d)
        self.hidden = int(hidden)
        self.tensors: dict[str, Tensor] = tensors if tensors is not None else {}

    @staticmethod
    def layout(d, hidden=1024):
        return [
            ("lstm.w_ih", (d, 4 * hidden), "uniform", d),
            ("lstm.w_hh", (hidden, 4 * hidden), "uniform", hidden),
            ("lstm.b", (4 * hidden,), "zeros", 0),
            ("fc.w", (hidden, 1), "uniform", hidden),
            ("fc.b", (1,), "zeros", 0),
        ]

    @classmethod
    def init(cls, d, hidden=1024, seed=0, dtype=np.float32):
        p = cls(d, hidden)
        p.tensors = materialize(cls.layout(d, hidden), seed, dtype)
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


@dataclass
class DiscriminatorOutput:
    prob: Tensor  # scalar, probability that the input is an original sequence
    phi: Tensor  # last LSTM hidden state


def discriminate(seq, params: DiscriminatorParams) -> DiscriminatorOutput:
    if not isinstance(seq, Tensor):
        seq = Tensor(seq, dtype=params.dtype)
    if seq.ndim != 2 or seq.shape[1] != params.d:
        raise DimensionError(f"discriminator expects F x {params.d} input, got {seq.shape}")
    zeros = Tensor(np.zeros(params.hidden), dtype=params.dtype)
    _, last = fn.lstm_forward(seq, params["lstm.w_ih"], params["lstm.w_hh"], params["lstm.b"], zeros, zeros)
    logit = reshape(last @ params["fc.w"] + params["fc.b"], ())
    return DiscriminatorOutput(prob=fn.sigmoid(logit), phi=last)
