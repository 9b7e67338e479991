import itertools

import pytest
import torch

from coopdiff.errors import ConfigError, SingularConversionError
from coopdiff.parameterizations import Prediction, convert, to_eps, to_v, to_x0
from coopdiff.schedules import ScheduleConfig, build_schedule, corrupt, schedule_preset

from conftest import synthetic_table


def make_triplet(table, t, batch=64, dim=2, seed=0):
    """Ground-truth (x0, eps, v, x_t) built from the definitions."""
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.randn(batch, dim, dtype=torch.float64, generator=gen)
    eps = torch.randn(batch, dim, dtype=torch.float64, generator=gen)
    x_t = corrupt(x0, eps, t, table)
    a = table.signal_coef[t].item() if isinstance(t, int) else None
    b = table.noise_coef[t].item() if isinstance(t, int) else None
    v = a * eps - b * x0
    return x0, eps, v, x_t


class TestSingleConversions:
    def test_x0_identity(self):
        table = build_schedule(ScheduleConfig(num_steps=10))
        value = torch.randn(8, 2, dtype=torch.float64)
        pred = Prediction(value, "x0", 3, table)
        assert torch.equal(to_x0(pred, torch.randn(8, 2, dtype=torch.float64)), value)

    def test_eps_at_full_signal_recovers_x0(self):
        table = synthetic_table([1.0, 0.5])
        x0 = torch.randn(8, 2, dtype=torch.float64)
        pred = Prediction(torch.zeros_like(x0), "eps", 0, table)
        assert torch.allclose(to_x0(pred, x0), x0)

    def test_v_recovers_x0_from_definitions(self):
        table = build_schedule(ScheduleConfig(num_steps=100))
        for t in (0, 13, 57, 99):
            x0, eps, v, x_t = make_triplet(table, t)
            pred = Prediction(v, "v", t, table)
            assert torch.allclose(to_x0(pred, x_t), x0, atol=1e-6)
            assert torch.allclose(to_eps(pred, x_t), eps, atol=1e-6)

    def test_terminal_zero_signal_identities(self):
        # alpha_bar = 0:  v = -x0 and to_x0(v) = x0; the v path is total there
        table = synthetic_table([1.0, 0.5, 0.0])
        x0, eps, _, x_t = make_triplet(table, 2)
        assert torch.allclose(x_t, eps)
        v = to_v(Prediction(eps, "eps", 1, table), corrupt(x0, eps, 1, table))
        del v
        v_terminal = 0.0 * eps - 1.0 * x0
        pred = Prediction(v_terminal, "v", 2, table)
        assert torch.allclose(to_x0(pred, x_t), x0, atol=1e-12)

    def test_full_signal_v_equals_eps(self):
        table = synthetic_table([1.0, 0.5])
        x0, eps, _, _ = make_triplet(table, 0)
        x_t = corrupt(x0, eps, 0, table)
        v = to_v(Prediction(eps, "eps", 0, table), x_t)
        assert torch.allclose(v, eps, atol=1e-12)

    def test_eps_round_trip_through_v(self):
        table = build_schedule(schedule_preset("ddpm"))
        for t in (1, 500, 998):
            x0, eps, _, x_t = make_triplet(table, t)
            v = to_v(Prediction(eps, "eps", t, table), x_t)
            back = to_eps(Prediction(v, "v", t, table), x_t)
            assert torch.allclose(back, eps, atol=1e-6)


class TestCommutingPaths:
    @pytest.mark.parametrize("cycle", list(itertools.permutations(["eps", "x0", "v"])))
    def test_three_step_cycles_close(self, cycle):
        table = build_schedule(ScheduleConfig(num_steps=64))
        start = cycle[0]
        for t in (0, 5, 31, 63):
            x0, eps, v, x_t = make_triplet(table, t)
            value = {"x0": x0, "eps": eps, "v": v}[start]
            pred = Prediction(value, start, t, table)
            for kind in cycle[1:] + (start,):
                pred = convert(pred, x_t, kind)
            assert torch.allclose(pred.value, value, atol=1e-6)

    def test_vector_timesteps(self):
        table = build_schedule(ScheduleConfig(num_steps=64))
        gen = torch.Generator().manual_seed(1)
        x0 = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        eps = torch.randn(32, 2, dtype=torch.float64, generator=gen)
        t = torch.randint(0, 64, (32,), generator=gen)
        x_t = corrupt(x0, eps, t, table)
        pred = Prediction(eps, "eps", t, table)
        v = convert(pred, x_t, "v")
        recovered = to_x0(v, x_t)
        assert torch.allclose(recovered, x0, atol=1e-6)


class TestSingularities:
    def test_eps_to_x0_singular_at_zero_signal(self):
        table = build_schedule(ScheduleConfig(num_steps=10, zero_terminal_snr=True))
        eps = torch.randn(4, 2, dtype=torch.float64)
        pred = Prediction(eps, "eps", 9, table)
        with pytest.raises(SingularConversionError):
            to_x0(pred, eps)
        with pytest.raises(SingularConversionError):
            to_v(pred, eps)

    def test_v_total_at_zero_signal(self):
        table = build_schedule(ScheduleConfig(num_steps=10, zero_terminal_snr=True))
        x0 = torch.randn(4, 2, dtype=torch.float64)
        eps = torch.randn(4, 2, dtype=torch.float64)
        x_t = corrupt(x0, eps, 9, table)
        v = table.signal_coef[9] * eps - table.noise_coef[9] * x0
        pred = Prediction(v, "v", 9, table)
        assert torch.allclose(to_x0(pred, x_t), x0, atol=1e-9)
        assert torch.allclose(to_eps(pred, x_t), eps, atol=1e-9)

    def test_x0_to_eps_singular_at_zero_noise(self):
        table = synthetic_table([1.0, 0.5])
        x0 = torch.randn(4, 2, dtype=torch.float64)
        pred = Prediction(x0, "x0", 0, table)
        with pytest.raises(SingularConversionError):
            to_eps(pred, x0)
        with pytest.raises(SingularConversionError):
            to_v(pred, x0)

    def test_bad_kind_and_shape(self):
        table = build_schedule(ScheduleConfig(num_steps=10))
        with pytest.raises(ConfigError):
            Prediction(torch.zeros(2, 2, dtype=torch.float64), "score", 0, table)
        pred = Prediction(torch.zeros(2, 2, dtype=torch.float64), "x0", 0, table)
        with pytest.raises(ConfigError):
            to_eps(pred, torch.zeros(3, 2, dtype=torch.float64))
        with pytest.raises(ConfigError):
            convert(pred, torch.zeros(2, 2, dtype=torch.float64), "score")
