import pytest
import torch
import torch.nn as nn

from coopdiff.adaptation import (
    AdaptConfig,
    adapt_stage1_loss,
    adapt_stage2_loss,
    run_adaptation,
    zero_snr_student_table,
)
from coopdiff.datasets import eight_gaussians
from coopdiff.errors import ConfigError, ContractViolationError, ScheduleMismatchError
from coopdiff.networks import GeneratorSpec, generate
from coopdiff.parameterizations import Prediction, to_v
from coopdiff.schedules import ScheduleConfig, build_schedule


def make_teacher(seed=0):
    torch.manual_seed(seed)
    teacher = GeneratorSpec(data_shape=(2,), hidden_width=16, num_blocks=2,
                            prediction_kind="eps", zero_init_head=False).build()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher


def make_student(seed=1):
    torch.manual_seed(seed)
    return GeneratorSpec(data_shape=(2,), hidden_width=16, num_blocks=2,
                         prediction_kind="v", zero_init_head=False).build()


class VWrapper(nn.Module):
    """Student that is exactly the algebraic v-view of the teacher."""

    kind = "v"

    def __init__(self, teacher, table):
        super().__init__()
        self.teacher = teacher
        self.table = table

    def forward(self, x_t, t, cond=None):
        pred = generate(self.teacher, x_t, t, self.table, cond)
        return to_v(pred, x_t)

    def parameters(self, recurse=True):  # wrapper adds no trainable weights
        return iter([])


def batch(table, n=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.randn(n, 2, dtype=torch.float64, generator=gen)
    eps = torch.randn(n, 2, dtype=torch.float64, generator=gen)
    t = torch.randint(0, table.num_steps, (n,), generator=gen)
    return x0, eps, t


class TestStage1:
    def test_exact_v_wrapper_reaches_zero_loss(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        student = VWrapper(teacher, table)
        x0, eps, t = batch(table)
        loss = adapt_stage1_loss(student, teacher, x0, eps, t, table)
        assert loss.item() == pytest.approx(0.0, abs=1e-18)

    def test_unfrozen_teacher_rejected(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        for p in teacher.parameters():
            p.requires_grad_(True)
        x0, eps, t = batch(table)
        with pytest.raises(ContractViolationError):
            adapt_stage1_loss(make_student(), teacher, x0, eps, t, table)

    def test_kind_contracts(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        x0, eps, t = batch(table)
        wrong_student = GeneratorSpec(data_shape=(2,), hidden_width=8, num_blocks=1,
                                      prediction_kind="eps").build()
        with pytest.raises(ConfigError):
            adapt_stage1_loss(wrong_student, teacher, x0, eps, t, table)

    def test_teacher_receives_no_gradient(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        student = make_student()
        x0, eps, t = batch(table)
        loss = adapt_stage1_loss(student, teacher, x0, eps, t, table)
        loss.backward()
        assert all(p.grad is None for p in teacher.parameters())
        assert any(p.grad is not None and p.grad.abs().max() > 0
                   for p in student.parameters())


class TestStage2:
    def test_student_schedule_must_be_rescale(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        student = make_student()
        x0, eps, t = batch(table)
        with pytest.raises(ScheduleMismatchError):
            adapt_stage2_loss(student, teacher, x0, eps, t, table, table)

    def test_matches_stage1_at_t_zero(self):
        # the rescale preserves the first signal coefficient, so the two
        # corruption paths coincide at t = 0
        table = build_schedule(ScheduleConfig(num_steps=100))
        student_table = zero_snr_student_table(table)
        teacher = make_teacher()
        student = make_student()
        gen = torch.Generator().manual_seed(5)
        x0 = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        eps = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        t = torch.zeros(32, dtype=torch.long)
        s1 = adapt_stage1_loss(student, teacher, x0, eps, t, table)
        s2 = adapt_stage2_loss(student, teacher, x0, eps, t, table, student_table)
        assert s2.item() == pytest.approx(s1.item(), rel=1e-9)

    def test_student_snr_dominated_by_teacher(self):
        table = build_schedule(ScheduleConfig(num_steps=1000, schedule_kind="scaled_linear",
                                              beta_start=0.00085, beta_end=0.012))
        student_table = zero_snr_student_table(table)
        assert (student_table.snr <= table.snr + 1e-15).all()
        assert student_table.snr[-1].item() == 0.0

    def test_teacher_signal_never_zero(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        assert (table.signal_coef > 0).all()
        teacher = make_teacher()
        student = make_student()
        student_table = zero_snr_student_table(table)
        gen = torch.Generator().manual_seed(5)
        x0 = torch.randn(16, 2, dtype=torch.float64, generator=gen)
        eps = torch.randn(16, 2, dtype=torch.float64, generator=gen)
        t = torch.full((16,), 99)  # terminal step of the student schedule
        loss = adapt_stage2_loss(student, teacher, x0, eps, t, table, student_table)
        assert torch.isfinite(loss)

    def test_literal_two_input_differs(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        student_table = zero_snr_student_table(table)
        teacher = make_teacher()
        student = make_student()
        gen = torch.Generator().manual_seed(6)
        x0 = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        eps = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        t = torch.full((32,), 60)
        shared = adapt_stage2_loss(student, teacher, x0, eps, t, table, student_table)
        literal = adapt_stage2_loss(student, teacher, x0, eps, t, table, student_table,
                                    literal_two_input=True)
        assert shared.item() != pytest.approx(literal.item())


class TestRunAdaptation:
    def test_loss_drops_quickly(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        student = make_student()
        ds = eight_gaussians()
        cfg = AdaptConfig(stage=1, iterations=300, batch_size=64, seed=0, probe_size=256)
        result = run_adaptation(student, teacher, ds, table, cfg)
        assert result.probe_final < result.probe_initial / 2

    def test_stage2_runs(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        teacher = make_teacher()
        student = make_student()
        ds = eight_gaussians()
        cfg = AdaptConfig(stage=2, iterations=50, batch_size=32, seed=0, probe_size=128)
        result = run_adaptation(student, teacher, ds, table, cfg)
        assert len(result.losses) == 50

    def test_bad_stage_rejected(self):
        with pytest.raises(ConfigError):
            AdaptConfig(stage=3).validate()
