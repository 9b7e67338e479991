"""Quick adaptation of a frozen eps-prediction teacher to a v-prediction,
zero-terminal-SNR student.

Stage 1 regresses a v-output student onto the teacher's algebraic v-view on
the teacher's own schedule.  Stage 2 keeps the teacher fixed and corrupts
inputs with the zero-terminal-SNR rescale of the teacher schedule (shared
input by default; the two-input literal pairing is available behind a flag);
the rescaled schedule has lower SNR everywhere, so the regression stays a
proper distillation target.  Both stages weight timesteps by the student-side
SNR, which vanishes at the rescaled terminal step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import torch

from .errors import ConfigError, ContractViolationError, ScheduleMismatchError, SingularConversionError
from .losses import mse_distance, reconstruction_weight
from .networks import generate
from .parameterizations import Prediction, to_v
from .schedules import ScheduleTable, build_schedule, corrupt


@dataclass
class AdaptConfig:
    stage: int = 1
    iterations: int = 1000
    batch_size: int = 128
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    probe_size: int = 1024
    literal_two_input: bool = False

    def validate(self) -> None:
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")


def _check_frozen(teacher: torch.nn.Module) -> None:
    if any(p.requires_grad for p in teacher.parameters()):
        raise ContractViolationError("adaptation teacher must be frozen (requires_grad=False)")


def _check_kinds(student, teacher) -> None:
    if getattr(teacher, "kind", None) != "eps":
        raise ConfigError(f"teacher must be an eps-prediction model, got {teacher.kind!r}")
    if getattr(student, "kind", None) != "v":
        raise ConfigError(f"student must be a v-prediction model, got {student.kind!r}")


def zero_snr_student_table(teacher_table: ScheduleTable) -> ScheduleTable:
    """The zero-terminal-SNR rescale of the teacher schedule."""
    return build_schedule(dataclasses.replace(teacher_table.config, zero_terminal_snr=True))


def _check_student_table(teacher_table: ScheduleTable, student_table: ScheduleTable) -> None:
    expected = zero_snr_student_table(teacher_table)
    if student_table.num_steps != expected.num_steps or not torch.allclose(
        student_table.alpha_bar, expected.alpha_bar, atol=1e-12
    ):
        raise ScheduleMismatchError(
            "student schedule must be the zero-terminal-SNR rescale of the teacher schedule"
        )


def teacher_v_target(teacher, x_t: torch.Tensor, t, teacher_table: ScheduleTable) -> torch.Tensor:
    """The frozen teacher's v-view at its own coefficients (no gradient)."""
    _check_frozen(teacher)
    if (teacher_table.signal_coef == 0).any():
        raise SingularConversionError(
            "teacher schedule has a zero-signal timestep; its eps output cannot be converted"
        )
    with torch.no_grad():
        pred = generate(teacher, x_t, t, teacher_table)
        return to_v(pred, x_t)


def adapt_stage1_loss(
    student, teacher, x0: torch.Tensor, eps: torch.Tensor, t, table: ScheduleTable,
) -> torch.Tensor:
    """SNR-weighted v-space regression on the shared (teacher) schedule."""
    _check_frozen(teacher)
    _check_kinds(student, teacher)
    x_t = corrupt(x0, eps, t, table)
    target = teacher_v_target(teacher, x_t, t, table)
    v_student = student(x_t, t)
    weight = reconstruction_weight(table, t)
    return (weight * mse_distance(v_student, target)).mean()


def adapt_stage2_loss(
    student, teacher, x0: torch.Tensor, eps: torch.Tensor, t,
    teacher_table: ScheduleTable, student_table: ScheduleTable,
    literal_two_input: bool = False,
) -> torch.Tensor:
    """Stage-2 regression: the student runs on the rescaled (zero-terminal-SNR)
    corruption; the teacher target keeps its own coefficients.

    By default both see the same rescaled corruption.  With
    ``literal_two_input`` the teacher gets its own corruption of the same
    (x0, eps) draw under the teacher schedule.
    """
    _check_frozen(teacher)
    _check_kinds(student, teacher)
    _check_student_table(teacher_table, student_table)
    x_student_in = corrupt(x0, eps, t, student_table)
    x_teacher_in = corrupt(x0, eps, t, teacher_table) if literal_two_input else x_student_in
    target = teacher_v_target(teacher, x_teacher_in, t, teacher_table)
    v_student = student(x_student_in, t)
    weight = reconstruction_weight(student_table, t)
    return (weight * mse_distance(v_student, target)).mean()


@dataclass
class AdaptResult:
    losses: list = field(default_factory=list)
    probe_initial: float = 0.0
    probe_final: float = 0.0


def run_adaptation(
    student, teacher, dataset, teacher_table: ScheduleTable, cfg: AdaptConfig,
    student_table: ScheduleTable | None = None,
) -> AdaptResult:
    """Adam loop over the stage loss; probes a frozen batch before and after."""
    cfg.validate()
    _check_frozen(teacher)
    _check_kinds(student, teacher)
    if cfg.stage == 2:
        if student_table is None:
            student_table = zero_snr_student_table(teacher_table)
        _check_student_table(teacher_table, student_table)

    rng = torch.Generator()
    rng.manual_seed(cfg.seed)
    T = teacher_table.num_steps

    def draw(size):
        x0 = dataset.sample(size, rng)
        eps = torch.randn(x0.shape, dtype=x0.dtype, generator=rng)
        t = torch.randint(0, T, (size,), generator=rng)
        return x0, eps, t

    def loss_on(x0, eps, t):
        if cfg.stage == 1:
            return adapt_stage1_loss(student, teacher, x0, eps, t, teacher_table)
        return adapt_stage2_loss(
            student, teacher, x0, eps, t, teacher_table, student_table,
            literal_two_input=cfg.literal_two_input,
        )

    probe = draw(cfg.probe_size)
    result = AdaptResult()
    with torch.no_grad():
        result.probe_initial = float(loss_on(*probe))
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr, betas=cfg.betas)
    for _ in range(cfg.iterations):
        x0, eps, t = draw(cfg.batch_size)
        loss = loss_on(x0, eps, t)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        result.losses.append(float(loss.detach()))
    with torch.no_grad():
        result.probe_final = float(loss_on(*probe))
    return result
