"""Staircase decay of the reconstruction/consistency weights over training.

The multiplier is piecewise constant over K equal segments of the run and
steps down from 1 to 0:  1 - floor(n*K/N) / (K-1), clamped to [0, 1].
It multiplies the two regression losses jointly and never touches the
adversarial term.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class AnnealConfig:
    num_segments: int = 5       # K
    total_iterations: int = 1   # N, normally filled from the train config
    base_weight: float = 1.0    # the weight being annealed (lambda')
    enabled: bool = True

    def validate(self) -> None:
        if self.num_segments < 2:
            raise ConfigError(f"num_segments must be >= 2, got {self.num_segments}")
        if self.total_iterations < self.num_segments:
            raise ConfigError(
                f"total_iterations ({self.total_iterations}) must be >= "
                f"num_segments ({self.num_segments})"
            )
        if self.base_weight < 0:
            raise ConfigError(f"base_weight must be >= 0, got {self.base_weight}")


def anneal_multiplier(n: int, cfg: AnnealConfig) -> float:
    """Multiplier in [0, 1] at iteration ``n``; 1.0 when annealing is disabled.

    Integer arithmetic (floor(n*K/N)) keeps segment boundaries exact for
    non-integer N/K.
    """
    if not cfg.enabled:
        return 1.0
    cfg.validate()
    if not (0 <= n < cfg.total_iterations):
        raise ConfigError(
            f"iteration n={n} out of range [0, {cfg.total_iterations})"
        )
    segment = (n * cfg.num_segments) // cfg.total_iterations
    value = 1.0 - segment / (cfg.num_segments - 1)
    return min(1.0, max(0.0, value))


def annealed_weight(n: int, cfg: AnnealConfig) -> float:
    """base_weight scaled by the staircase multiplier."""
    return cfg.base_weight * anneal_multiplier(n, cfg)
