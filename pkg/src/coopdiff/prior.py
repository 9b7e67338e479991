"""Informative prior initialization.

Instead of drawing terminal noise from a standard normal, draw

    signal_T * (mean + std * eps') + noise_T * eps,   eps', eps ~ N(0, I)

with per-dimension data moments (mean, std).  This matches the law of
corrupting a moment-matched Gaussian to the terminal level, closing the
train/inference gap of schedules whose terminal SNR is not zero.  Under a
zero-terminal-SNR schedule the correction vanishes and the draw is exactly
standard normal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

from .errors import ConfigError
from .schedules import ScheduleTable

#: Below this terminal SNR the correction becomes numerically fragile and a
#: schedule fix (v-prediction + zero terminal SNR adaptation) works better.
LOW_SNR_WARNING_THRESHOLD = 1e-4


@dataclass
class PriorStats:
    """Per-dimension first and second moments of the data."""

    mean: torch.Tensor
    std: torch.Tensor
    n_samples: int

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ConfigError(
                f"mean and std shapes differ: {tuple(self.mean.shape)} vs {tuple(self.std.shape)}"
            )
        if (self.std < 0).any():
            raise ConfigError("std must be non-negative elementwise")

    def state_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n_samples": self.n_samples}

    @classmethod
    def from_state_dict(cls, state: dict) -> "PriorStats":
        return cls(state["mean"], state["std"], int(state["n_samples"]))


def estimate_stats(samples, n: int | None = None) -> PriorStats:
    """Per-dimension sample mean and population standard deviation.

    ``samples`` is a tensor (batch first) or an iterable of sample/batch
    tensors; at most ``n`` samples are consumed when given.
    """
    if torch.is_tensor(samples):
        batches = [samples]
    else:
        batches = []
        count = 0
        for item in samples:
            if not torch.is_tensor(item):
                item = torch.as_tensor(item, dtype=torch.float64)
            if item.dim() == 0:
                raise ConfigError("sample stream must yield tensors with a batch or data dim")
            batches.append(item if item.dim() > 1 else item.unsqueeze(0))
            count += batches[-1].shape[0]
            if n is not None and count >= n:
                break
        if not batches:
            raise ConfigError("empty sample stream")
    data = torch.cat([b.reshape(b.shape[0], *batches[0].shape[1:]) for b in batches], dim=0)
    if n is not None:
        data = data[:n]
    if data.shape[0] < 2:
        raise ConfigError(f"need at least 2 samples to estimate moments, got {data.shape[0]}")
    mean = data.mean(dim=0)
    std = data.std(dim=0, unbiased=False)
    return PriorStats(mean=mean, std=std, n_samples=data.shape[0])


def sample_informative_prior(
    stats: PriorStats, table: ScheduleTable, batch_size: int,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw terminal noise shaped (batch_size, *data_shape) from the corrected prior."""
    a = table.signal_coef[-1]
    b = table.noise_coef[-1]
    snr_T = table.snr[-1].item()
    if 0.0 < snr_T < LOW_SNR_WARNING_THRESHOLD:
        warnings.warn(
            f"terminal SNR {snr_T:.2e} is very low; the informative prior is numerically "
            "fragile here, prefer adapting the schedule to zero terminal SNR",
            RuntimeWarning,
        )
    shape = (batch_size,) + tuple(stats.mean.shape)
    eps_prime = torch.randn(shape, dtype=torch.float64, generator=generator)
    eps = torch.randn(shape, dtype=torch.float64, generator=generator)
    return a * (stats.mean + stats.std * eps_prime) + b * eps
