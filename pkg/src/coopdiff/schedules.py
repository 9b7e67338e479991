"""Discrete noise schedules for the forward corruption process.

Convention: timesteps are 0-indexed, ``t = 0`` is the *cleanest* corrupted
level and ``t = T - 1`` the noisiest.  A table stores, per timestep,

    signal_coef[t] = sqrt(alpha_bar[t])        (coefficient on x0)
    noise_coef[t]  = sqrt(1 - alpha_bar[t])    (coefficient on the noise)
    snr[t]         = alpha_bar[t] / (1 - alpha_bar[t])

so that ``x_t = signal_coef[t] * x0 + noise_coef[t] * eps`` is variance
preserving (``signal**2 + noise**2 = 1``).

The optional zero-terminal-SNR rescale shifts and scales ``sqrt(alpha_bar)``
affinely so the first entry is preserved and the last becomes exactly zero,
then rebuilds the remaining columns from it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import torch

from .errors import ConfigError

SCHEDULE_KINDS = ("linear", "scaled_linear", "cosine")


@dataclass(frozen=True)
class ScheduleConfig:
    """Parameters of a discrete beta schedule.

    ``beta_start``/``beta_end`` are ignored by the cosine schedule, which
    derives its betas from a squared-cosine alpha_bar curve.
    """

    num_steps: int = 1000
    schedule_kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    zero_terminal_snr: bool = False

    def validate(self) -> None:
        if not isinstance(self.num_steps, int) or self.num_steps < 2:
            raise ConfigError(f"num_steps must be an integer >= 2, got {self.num_steps!r}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ConfigError(
                f"schedule_kind must be one of {SCHEDULE_KINDS}, got {self.schedule_kind!r}"
            )
        if not (0.0 < self.beta_start < 1.0):
            raise ConfigError(f"beta_start must lie in (0, 1), got {self.beta_start!r}")
        if not (0.0 < self.beta_end < 1.0):
            raise ConfigError(f"beta_end must lie in (0, 1), got {self.beta_end!r}")
        if self.beta_start > self.beta_end:
            raise ConfigError(
                f"beta_start must not exceed beta_end, got {self.beta_start!r} > {self.beta_end!r}"
            )


#: Named presets addressable from config files.
SCHEDULE_PRESETS: dict[str, ScheduleConfig] = {
    "ddpm": ScheduleConfig(1000, "linear", 1e-4, 0.02),
    "sd": ScheduleConfig(1000, "scaled_linear", 0.00085, 0.012),
    "sd_zero_snr": ScheduleConfig(1000, "scaled_linear", 0.00085, 0.012, zero_terminal_snr=True),
    "cosine": ScheduleConfig(1000, "cosine"),
}


def schedule_preset(name: str) -> ScheduleConfig:
    try:
        return SCHEDULE_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown schedule preset {name!r}; available: {sorted(SCHEDULE_PRESETS)}"
        ) from None


class ScheduleTable:
    """Immutable per-timestep coefficient table; all columns are float64 1-D tensors."""

    def __init__(self, config: ScheduleConfig, betas: torch.Tensor, alpha_bar: torch.Tensor):
        self.config = config
        self.betas = betas
        self.alpha_bar = alpha_bar
        self.signal_coef = torch.sqrt(alpha_bar)
        self.noise_coef = torch.sqrt(1.0 - alpha_bar)
        self.snr = alpha_bar / (1.0 - alpha_bar)

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]

    def to_csv(self, path) -> None:
        """Export diagnostics columns (t, beta, alpha_bar, snr)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "beta", "alpha_bar", "snr"])
            for t in range(self.num_steps):
                writer.writerow(
                    [t, self.betas[t].item(), self.alpha_bar[t].item(), self.snr[t].item()]
                )

    def __repr__(self) -> str:  # pragma: no cover
        c = self.config
        return (
            f"ScheduleTable(T={self.num_steps}, kind={c.schedule_kind!r}, "
            f"zero_terminal_snr={c.zero_terminal_snr})"
        )


@dataclass(frozen=True)
class SkipMap:
    """Timestep skips: a large one (k) for the adversarial teacher pair and a
    small one (m) for the consistency pair."""

    k: int = 250
    m: int = 25

    def validate(self, num_steps: int) -> None:
        if not (1 <= self.m <= self.k):
            raise ConfigError(f"skip map requires 1 <= m <= k, got m={self.m}, k={self.k}")
        if self.k >= num_steps:
            raise ConfigError(f"skip k={self.k} must be < num_steps={num_steps}")


def _betas(cfg: ScheduleConfig) -> torch.Tensor:
    T = cfg.num_steps
    if cfg.schedule_kind == "linear":
        return torch.linspace(cfg.beta_start, cfg.beta_end, T, dtype=torch.float64)
    if cfg.schedule_kind == "scaled_linear":
        # square-root spacing, squared back (the Stable-Diffusion convention)
        root = torch.linspace(cfg.beta_start**0.5, cfg.beta_end**0.5, T, dtype=torch.float64)
        return root**2
    if cfg.schedule_kind == "cosine":
        s = 0.008
        steps = torch.arange(T + 1, dtype=torch.float64) / T
        curve = torch.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        curve = curve / curve[0]
        betas = 1.0 - curve[1:] / curve[:-1]
        # keep betas strictly inside (0, 1) so alpha_bar stays strictly decreasing
        return torch.clamp(betas, 1e-8, 0.999)
    raise ConfigError(f"schedule_kind must be one of {SCHEDULE_KINDS}, got {cfg.schedule_kind!r}")


def build_schedule(cfg: ScheduleConfig) -> ScheduleTable:
    """Construct the coefficient table for ``cfg``.

    With ``zero_terminal_snr`` the signal coefficient is affinely rescaled so
    its first entry is preserved and the terminal entry is exactly zero;
    betas / alpha_bar / snr are recomputed from the rescaled coefficients.
    """
    cfg.validate()
    betas = _betas(cfg)
    alpha_bar = torch.cumprod(1.0 - betas, dim=0)
    if cfg.zero_terminal_snr:
        s = torch.sqrt(alpha_bar)
        s = (s - s[-1]) * (s[0] / (s[0] - s[-1]))
        alpha_bar = s**2
        prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bar[:-1]])
        betas = 1.0 - alpha_bar / prev
    return ScheduleTable(cfg, betas, alpha_bar)


def _as_index(t, num_steps: int) -> torch.Tensor:
    """Normalize a timestep argument (int or integer tensor) and range-check it."""
    if isinstance(t, int):
        t = torch.tensor([t])
    if not torch.is_tensor(t):
        raise ConfigError(f"timestep must be an int or integer tensor, got {type(t).__name__}")
    if t.dtype not in (torch.int64, torch.int32):
        raise ConfigError(f"timestep tensor must be integer typed, got {t.dtype}")
    t = t.long()
    if t.numel() and (t.min().item() < 0 or t.max().item() >= num_steps):
        raise ConfigError(
            f"timestep out of range [0, {num_steps}): min={t.min().item()}, max={t.max().item()}"
        )
    return t


def gather_coef(column: torch.Tensor, t, like: torch.Tensor) -> torch.Tensor:
    """Select per-timestep coefficients and reshape to broadcast against ``like``.

    ``t`` may be a scalar int or a (batch,) tensor matching ``like``'s batch dim.
    """
    idx = _as_index(t, column.shape[0])
    vals = column[idx]
    if vals.numel() == 1:
        return vals.reshape(())
    if vals.shape[0] != like.shape[0]:
        raise ConfigError(
            f"per-element timesteps ({vals.shape[0]}) must match batch size ({like.shape[0]})"
        )
    return vals.reshape((-1,) + (1,) * (like.dim() - 1))


def corrupt(x0: torch.Tensor, eps: torch.Tensor, t, table: ScheduleTable) -> torch.Tensor:
    """Forward-corrupt ``x0`` to level ``t``: signal*x0 + noise*eps."""
    if x0.shape != eps.shape:
        raise ConfigError(f"x0 and eps shapes differ: {tuple(x0.shape)} vs {tuple(eps.shape)}")
    a = gather_coef(table.signal_coef, t, x0)
    b = gather_coef(table.noise_coef, t, x0)
    return a * x0 + b * eps


def forward_chain(
    x0: torch.Tensor,
    x_tm: torch.Tensor,
    t_m,
    t,
    table: ScheduleTable,
    *,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Extend a forward trajectory from level ``t_m`` to level ``t > t_m``.

    The Gaussian forward process is Markov, so the transition depends on
    ``x_tm`` only; ``x0`` is accepted for shape validation and to make the
    trajectory coupling explicit at call sites.  Marginally the result is
    distributed exactly as ``corrupt(x0, eps, t)``.
    """
    if x0.shape != x_tm.shape:
        raise ConfigError(f"x0 and x_tm shapes differ: {tuple(x0.shape)} vs {tuple(x_tm.shape)}")
    t_m_idx = _as_index(t_m, table.num_steps)
    t_idx = _as_index(t, table.num_steps)
    if t_m_idx.numel() == 1 and t_idx.numel() > 1:
        t_m_idx = t_m_idx.expand_as(t_idx)
    if t_idx.numel() == 1 and t_m_idx.numel() > 1:
        t_idx = t_idx.expand_as(t_m_idx)
    if (t_m_idx >= t_idx).any():
        raise ConfigError("forward_chain requires t_m < t for every element")
    ab_t = gather_coef(table.alpha_bar, t_idx, x_tm)
    ab_tm = gather_coef(table.alpha_bar, t_m_idx, x_tm)
    ratio = torch.clamp(ab_t / ab_tm, max=1.0)
    if noise is None:
        noise = torch.randn(x_tm.shape, dtype=x_tm.dtype, generator=generator)
    return torch.sqrt(ratio) * x_tm + torch.sqrt(1.0 - ratio) * noise


def skip(t, s: int):
    """Clamped timestep skip: max(t - s, 0). Works on ints and integer tensors."""
    if s < 0:
        raise ConfigError(f"skip amount must be >= 0, got {s}")
    if isinstance(t, int):
        if t < 0:
            raise ConfigError(f"timestep must be >= 0, got {t}")
        return max(t - s, 0)
    return torch.clamp(t - s, min=0)
