"""Training losses.

The adversarial pair is non-saturating by default (the hinge-free literal
two-term form is available behind ``form="literal"``): the discriminator
treats detached generations from less-corrupted inputs as real and the
current generations as fake.  The regression pair uses SNR-derived weights:

    rec weight  lambda(t)     = SNR(t)
    con weight  lambda_con(t) = 1 / (1/SNR(t) - 1/SNR(t_m))

All losses are scalars averaged over the batch; logits are clamped to +-30
before log-sigmoid for numerical safety.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .annealing import AnnealConfig, anneal_multiplier
from .errors import ConfigError, ContractViolationError
from .networks import discriminate, extract_features
from .schedules import ScheduleTable, corrupt, gather_coef, skip

LOGIT_BOUND = 30.0
ADV_FORMULATIONS = ("cooperative", "naive_real", "corrupted_ufogen")
ADV_LOSS_FORMS = ("nonsaturating", "literal")


def clamp_logits(logits: torch.Tensor, bound: float = LOGIT_BOUND) -> torch.Tensor:
    return torch.clamp(logits, -bound, bound)


def _d_loss_from_logits(real_logits, fake_logits, form: str) -> torch.Tensor:
    real = clamp_logits(real_logits)
    fake = clamp_logits(fake_logits)
    if form == "nonsaturating":
        return -(F.logsigmoid(real).mean() + F.logsigmoid(-fake).mean())
    if form == "literal":
        return -(F.logsigmoid(real).mean() - F.logsigmoid(fake).mean())
    raise ConfigError(f"adversarial loss form must be one of {ADV_LOSS_FORMS}, got {form!r}")


def coop_adv_d_loss(
    D, x_teacher: torch.Tensor, x_student: torch.Tensor, t, cond=None,
    form: str = "nonsaturating",
) -> torch.Tensor:
    """Discriminator side of the cooperative objective.

    ``x_teacher`` must already be detached (generations from the
    less-corrupted inputs are the stop-gradient ground truth); the student
    branch is detached here, so this loss trains only the discriminator.
    """
    if x_teacher.requires_grad:
        raise ContractViolationError("adversarial teacher samples must be detached (stop-gradient)")
    real = discriminate(D, x_teacher, t, cond)
    fake = discriminate(D, x_student.detach(), t, cond)
    return _d_loss_from_logits(real, fake, form)


def coop_adv_g_loss(D, x_student: torch.Tensor, t, cond=None) -> torch.Tensor:
    """Non-saturating generator side: -log sigmoid(D(student))."""
    logits = clamp_logits(discriminate(D, x_student, t, cond))
    if not torch.isfinite(logits).all():
        raise ValueError("discriminator produced non-finite logits")
    return -F.logsigmoid(logits).mean()


# ---------------------------------------------------------------------------
# Weights and distances
# ---------------------------------------------------------------------------


def reconstruction_weight(table: ScheduleTable, t) -> torch.Tensor:
    """lambda(t) = SNR(t), shaped (batch,) (scalar t gives shape (1,))."""
    ref = torch.empty(t.shape[0] if torch.is_tensor(t) else 1)
    return gather_coef(table.snr, t, ref).reshape(-1)


def consistency_weight(table: ScheduleTable, t, t_m) -> torch.Tensor:
    """lambda_con(t) = 1 / (1/SNR(t) - 1/SNR(t_m)).

    Zero where SNR(t) = 0 (the inverse-SNR gap is infinite) and, with a
    warning, where the gap is degenerate (SNR(t_m) <= SNR(t)).
    """
    snr_t = reconstruction_weight(table, t)
    snr_m = reconstruction_weight(table, t_m)
    inv_gap = 1.0 / snr_t - 1.0 / snr_m
    weight = torch.where(inv_gap > 0, 1.0 / inv_gap, torch.zeros_like(inv_gap))
    degenerate = torch.isfinite(inv_gap) & (inv_gap <= 0)
    if degenerate.any():
        warnings.warn(
            "consistency weight degenerate (SNR(t_m) <= SNR(t)); setting it to 0",
            RuntimeWarning,
        )
    return torch.where(torch.isfinite(weight), weight, torch.zeros_like(weight))


def mse_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-element mean squared error over non-batch dims, shaped (batch,)."""
    if a.shape != b.shape:
        raise ConfigError(f"distance operands differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).reshape(a.shape[0], -1).mean(dim=1)


def feature_distance(extractor, a: torch.Tensor, b: torch.Tensor, cond=None) -> torch.Tensor:
    """Per-element squared distance between frozen bottleneck features."""
    fa = extract_features(extractor, a, cond)
    fb = extract_features(extractor, b, cond)
    return mse_distance(fa, fb)


def latent_perceptual(extractor, z_pred: torch.Tensor, z_target: torch.Tensor, cond=None) -> torch.Tensor:
    """Mean squared bottleneck-feature distance (scalar)."""
    return feature_distance(extractor, z_pred, z_target, cond).mean()


def resolve_distance(distance, extractor=None, cond=None):
    """Map a distance choice ('mse', 'feature', or a callable) to a callable."""
    if callable(distance):
        return distance
    if distance == "mse":
        return mse_distance
    if distance == "feature":
        if extractor is None:
            raise ConfigError("distance='feature' requires a frozen feature extractor")
        return lambda a, b: feature_distance(extractor, a, b, cond)
    raise ConfigError(f"distance must be 'mse', 'feature' or a callable, got {distance!r}")


def reconstruction_loss(
    x0_pred: torch.Tensor, x0: torch.Tensor, t, table: ScheduleTable,
    distance="mse", extractor=None, cond=None,
) -> torch.Tensor:
    """SNR-weighted regression of the generation onto the clean sample."""
    dist = resolve_distance(distance, extractor, cond)
    return (reconstruction_weight(table, t) * dist(x0_pred, x0)).mean()


def consistency_loss(
    x0_pred: torch.Tensor, x0_target: torch.Tensor, t, t_m, table: ScheduleTable,
    distance="mse", extractor=None, cond=None,
) -> torch.Tensor:
    """Pulls the generation at level t toward the detached generation at t_m < t."""
    if x0_target.requires_grad:
        raise ContractViolationError("consistency target must be detached (stop-gradient)")
    t_t = t if torch.is_tensor(t) else torch.tensor([t])
    t_m_t = t_m if torch.is_tensor(t_m) else torch.tensor([t_m])
    if (t_m_t >= t_t).any():
        raise ConfigError("consistency pair requires t_m < t for every element")
    dist = resolve_distance(distance, extractor, cond)
    return (consistency_weight(table, t, t_m) * dist(x0_pred, x0_target)).mean()


@dataclass
class LossWeights:
    """Bundle of the per-timestep weight formulas plus the global knobs."""

    table: ScheduleTable
    consistency_skip: int = 25
    adv_weight: float = 1.0
    anneal: AnnealConfig | None = None

    def rec(self, t) -> torch.Tensor:
        return reconstruction_weight(self.table, t)

    def con(self, t, t_m=None) -> torch.Tensor:
        if t_m is None:
            t_m = skip(t, self.consistency_skip)
        return consistency_weight(self.table, t, t_m)

    def multiplier(self, n: int) -> float:
        if self.anneal is None:
            return 1.0
        return anneal_multiplier(n, self.anneal)


# ---------------------------------------------------------------------------
# Adversarial formulation variants
# ---------------------------------------------------------------------------


@dataclass
class AdversarialPair:
    """Prepared (real, fake) inputs for one adversarial formulation.

    ``real`` is detached; ``fake`` still carries generator gradients (the
    discriminator loss detaches its own copy).  ``t`` is the level passed to
    the time-conditioned discriminator for both branches.
    """

    real: torch.Tensor
    fake: torch.Tensor
    t: torch.Tensor | int

    def d_loss(self, D, cond=None, form: str = "nonsaturating") -> torch.Tensor:
        real = discriminate(D, self.real, self.t, cond)
        fake = discriminate(D, self.fake.detach(), self.t, cond)
        return _d_loss_from_logits(real, fake, form)

    def g_loss(self, D, cond=None) -> torch.Tensor:
        return coop_adv_g_loss(D, self.fake, self.t, cond)


def prepare_adversarial_pair(
    formulation: str, *, x0: torch.Tensor, x_student: torch.Tensor,
    x_teacher: torch.Tensor | None = None, t=None, table: ScheduleTable | None = None,
    generator: torch.Generator | None = None,
) -> AdversarialPair:
    """Build the (real, fake) pair for the selected formulation.

    cooperative      real = detached self-generations from less-corrupted inputs
    naive_real       real = clean data draws
    corrupted_ufogen both sides re-corrupted one step back before discrimination
    """
    if formulation == "cooperative":
        if x_teacher is None:
            raise ConfigError("cooperative formulation requires teacher samples")
        if x_teacher.requires_grad:
            raise ContractViolationError(
                "adversarial teacher samples must be detached (stop-gradient)"
            )
        return AdversarialPair(real=x_teacher, fake=x_student, t=t)
    if formulation == "naive_real":
        return AdversarialPair(real=x0.detach(), fake=x_student, t=t)
    if formulation == "corrupted_ufogen":
        if table is None:
            raise ConfigError("corrupted_ufogen requires the schedule table")
        s = skip(t if torch.is_tensor(t) else torch.tensor([t]), 1)
        real = corrupt(x0, torch.randn(x0.shape, dtype=x0.dtype, generator=generator), s, table)
        fake = corrupt(
            x_student,
            torch.randn(x_student.shape, dtype=x_student.dtype, generator=generator),
            s, table,
        )
        return AdversarialPair(real=real.detach(), fake=fake, t=s)
    raise ConfigError(f"formulation must be one of {ADV_FORMULATIONS}, got {formulation!r}")


def variant_adv_losses(
    formulation: str, D, *, x0: torch.Tensor, x_student: torch.Tensor,
    x_teacher: torch.Tensor | None = None, t=None, table: ScheduleTable | None = None,
    cond=None, generator: torch.Generator | None = None, form: str = "nonsaturating",
) -> tuple[torch.Tensor, torch.Tensor]:
    """(d_loss, g_loss) for one formulation against the current discriminator."""
    pair = prepare_adversarial_pair(
        formulation, x0=x0, x_student=x_student, x_teacher=x_teacher,
        t=t, table=table, generator=generator,
    )
    return pair.d_loss(D, cond, form), pair.g_loss(D, cond)
