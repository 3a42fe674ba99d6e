"""Loss functions and the alternating adversarial training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import functional as fn
from .discriminator import DiscriminatorParams, discriminate
from .errors import ConfigurationError, DegenerateInputError, DimensionError, NonFiniteLossError
from .generator import CANONICAL_CHANNELS, GeneratorParams, generate
from .optim import Adam, clip_grad_norm
from .tensor import Tensor, abs_, as_tensor, backward, clamp, log, mean, no_grad, square

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class TrainingConfig:
    alpha: float = 0.3
    lr_generator: float = 3e-5
    lr_discriminator: float = 1e-5
    epochs: int = 100
    steps_per_video: int = 1
    seed: int = 0
    d: int = 1024
    hidden: int = 1024
    channels: tuple = CANONICAL_CHANNELS
    score_hidden: int = 1024
    supervised: bool = False
    non_saturating_g_loss: bool = False
    clip_norm: float = 5.0
    patience: int = 20
    checkpoint_every: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        # zero is allowed: it freezes a network
        for name in ("lr_generator", "lr_discriminator"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.steps_per_video < 1:
            raise ConfigurationError(f"steps_per_video must be >= 1, got {self.steps_per_video}")
        if len(self.channels) != 5 or min(self.channels) < 1:
            raise ConfigurationError(f"channels needs 5 positive entries, got {self.channels}")
        if min(self.d, self.hidden, self.score_hidden) < 1:
            raise ConfigurationError("d, hidden and score_hidden must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive or None, got {self.clip_norm}")
        if self.patience < 0 or self.checkpoint_every < 0:
            raise ConfigurationError("patience and checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LossReport:
    adv_d: float
    adv_g: float
    rec: float
    spar: float
    sup: float | None = None
    total: float = field(default=float("nan"))

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean_of(cls, reports) -> "LossReport":
        reports = list(reports)
        sups = [r.sup for r in reports if r.sup is not None]
        return cls(
            adv_d=float(np.mean([r.adv_d for r in reports])),
            adv_g=float(np.mean([r.adv_g for r in reports])),
            rec=float(np.mean([r.rec for r in reports])),
            spar=float(np.mean([r.spar for r in reports])),
            sup=float(np.mean(sups)) if sups else None,
            total=float(np.mean([r.total for r in reports])),
        )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------
def clamp_prob(p):
    return clamp(as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)


def adversarial_losses(p_real, p_fake, non_saturating: bool = False):
    """Discriminator and generator adversarial losses.

    ``d_loss = -log p_real - log(1 - p_fake)``. The generator loss is the
    minimax ``log(1 - p_fake)`` by default and ``-log p_fake`` when
    ``non_saturating`` is set.
    """
    p_real, p_fake = _pair(p_real, p_fake)
    d_loss = -log(p_real) - log(1.0 - p_fake)
    g_loss = -log(p_fake) if non_saturating else log(1.0 - p_fake)
    return d_loss, g_loss


def reconstruction_loss(phi_real, phi_fake) -> Tensor:
    """Euclidean distance (not squared) between two hidden-state vectors."""
    phi_real, phi_fake = _pair(phi_real, phi_fake)
    if phi_real.shape != phi_fake.shape:
        raise DimensionError(f"reconstruction_loss: {phi_real.shape} vs {phi_fake.shape}")
    return fn.l2_norm(phi_real - phi_fake)


def sparsity_loss(scores, alpha: float = 0.3) -> Tensor:
    scores = scores if isinstance(scores, Tensor) else Tensor(scores, dtype=np.float64)
    if scores.size == 0:
        raise DegenerateInputError("sparsity_loss needs at least one score")
    return abs_(mean(scores) - alpha)


def supervised_loss(scores, target) -> Tensor:
    """Mean squared error between predicted and ground-truth frame scores."""
    scores, target = _pair(scores, target)
    if scores.shape != target.shape:
        raise DimensionError(f"supervised_loss: {scores.shape} vs {target.shape}")
    return mean(square(scores - target))


def _pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


# ---------------------------------------------------------------------------
# models and one training step
# ---------------------------------------------------------------------------
@dataclass
class Models:
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    opt_g: Adam
    opt_d: Adam


def _seeds(seed: int):
    g, d, order = np.random.SeedSequence(seed).spawn(3)
    return g, d, order


def build_models(config: TrainingConfig, dtype=np.float32) -> Models:
    g_seed, d_seed, _ = _seeds(config.seed)
    gen = GeneratorParams.init(config.d, config.channels, config.score_hidden, seed=g_seed, dtype=dtype)
    disc = DiscriminatorParams.init(config.d, config.hidden, seed=d_seed, dtype=dtype)
    return Models(
        generator=gen,
        discriminator=disc,
        opt_g=Adam(gen.parameters(), lr=config.lr_generator),
        opt_d=Adam(disc.parameters(), lr=config.lr_discriminator),
    )


def _check_finite(values: dict, step):
    for name, value in values.items():
        if value is not None and not math.isfinite(value):
            raise NonFiniteLossError(name, value, step)


def train_step(features, models: Models, config: TrainingConfig, gt_scores=None, step=None) -> LossReport:
    """One discriminator update followed by one generator update on one video."""
    gen, disc = models.generator, models.discriminator
    x = features if isinstance(features, Tensor) else Tensor(features, dtype=gen.dtype)
    if not np.isfinite(x.data).all():
        raise DegenerateInputError("training features contain non-finite values")
    if config.supervised and gt_scores is None:
        raise ConfigurationError("supervised training needs ground-truth scores for every video")

    # discriminator: generator outputs are constants here
    with no_grad():
        _, x_fake = generate(x, gen)
    models.opt_d.zero_grad()
    p_real = clamp_prob(discriminate(x, disc).prob)
    p_fake = clamp_prob(discriminate(x_fake, disc).prob)
    d_loss, _ = adversarial_losses(p_real, p_fake, config.non_saturating_g_loss)
    adv_d = d_loss.item()
    _check_finite({"adv_d": adv_d}, step)
    backward(d_loss)
    clip_grad_norm(disc.parameters(), config.clip_norm)
    models.opt_d.step()
    models.opt_d.zero_grad()

    # generator, through the freshly updated discriminator
    models.opt_g.zero_grad()
    scores, x_fake = generate(x, gen)
    with no_grad():
        phi_real = discriminate(x, disc).phi
    out_fake = discriminate(x_fake, disc)
    _, g_loss = adversarial_losses(p_real.detach(), clamp_prob(out_fake.prob), config.non_saturating_g_loss)
    rec = reconstruction_loss(phi_real, out_fake.phi)
    spar = sparsity_loss(scores, config.alpha)
    total = g_loss + rec + spar
    sup = None
    if config.supervised:
        sup = supervised_loss(scores, Tensor(gt_scores, dtype=gen.dtype))
        total = total + sup
    values = {
        "adv_g": g_loss.item(),
        "rec": rec.item(),
        "spar": spar.item(),
        "sup": None if sup is None else sup.item(),
    }
    _check_finite(values, step)
    backward(total)
    clip_grad_norm(gen.parameters(), config.clip_norm)
    models.opt_g.step()
    models.opt_g.zero_grad()
    models.opt_d.zero_grad()
    # reported total is the plain sum of the reported components
    reported_total = sum(v for v in values.values() if v is not None)
    return LossReport(adv_d=adv_d, total=reported_total, **values)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------
@dataclass
class TrainResult:
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    history: list  # per-epoch mean LossReport
    epochs_run: int
    stopped_early: bool = False


def _video_arrays(item):
    """Accept a VideoRecord, a (features, gt) pair or a bare feature matrix."""
    if hasattr(item, "features"):
        return item.features, getattr(item, "gt_scores", None)
    if isinstance(item, tuple):
        return item[0], item[1] if len(item) > 1 else None
    return item, None


def train(dataset, config: TrainingConfig, checkpoint_dir=None, models: Models | None = None) -> TrainResult:
    """Run ``epochs`` passes of :func:`train_step` over ``dataset`` in seeded shuffled order.

    Stops early once the epoch-mean total loss has not improved for
    ``config.patience`` epochs (0 disables early stopping). When
    ``checkpoint_dir`` is given and ``config.checkpoint_every`` > 0, a
    checkpoint is written every that many epochs.
    """
    from .checkpoint import save_checkpoint

    videos = [_video_arrays(v) for v in dataset]
    if not videos:
        raise ConfigurationError("training needs at least one video")
    if config.supervised and any(gt is None for _, gt in videos):
        raise ConfigurationError("supervised training needs gt_scores in every training record")
    models = models or build_models(config)
    dtype = models.generator.dtype
    tensors = [(Tensor(f, dtype=dtype), gt) for f, gt in videos]
    for t, _ in tensors:
        if t.shape[1] != config.d:
            raise DimensionError(f"video has d={t.shape[1]} but the model expects d={config.d}")
    order_rng = np.random.default_rng(_seeds(config.seed)[2])

    history = []
    best, since_best = math.inf, 0
    step = 0
    stopped = False
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        reports = []
        for idx in order_rng.permutation(len(tensors)):
            feats, gt = tensors[idx]
            for _ in range(config.steps_per_video):
                reports.append(train_step(feats, models, config, gt, step))
                step += 1
        summary = LossReport.mean_of(reports)
        history.append(summary)
        logger.info("epoch %d: %s", epoch, summary)
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(f"{checkpoint_dir}/epoch_{epoch:04d}.ckpt", models.generator, config, models.discriminator)
        if summary.total < best - 1e-12:
            best, since_best = summary.total, 0
        else:
            since_best += 1
            if config.patience and since_best >= config.patience:
                stopped = True
                break
    return TrainResult(models.generator, models.discriminator, history, epoch if config.epochs else 0, stopped)


def predict_scores(features, gen: GeneratorParams) -> np.ndarray:
    """Inference-time frame scores (the discriminator is not used)."""
    with no_grad():
        scores, _ = generate(Tensor(features, dtype=gen.dtype), gen)
    return scores.numpy()
