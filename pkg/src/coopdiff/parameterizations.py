"""Lossless conversions among eps-, x0- and v-views of a model output.

With a = signal_coef[t], b = noise_coef[t] and x_t = a*x0 + b*eps, the three
views are related by

    v   = a*eps - b*x0
    x0  = a*x_t - b*v          eps = b*x_t + a*v
    x0  = (x_t - b*eps) / a    eps = (x_t - a*x0) / b

Conversions out of an eps view divide by a and are undefined where the signal
coefficient is zero (the terminal step of a zero-terminal-SNR schedule);
conversions out of an x0 view divide by b.  The v view converts everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, SingularConversionError
from .schedules import ScheduleTable, gather_coef

PREDICTION_KINDS = ("eps", "x0", "v")


@dataclass
class Prediction:
    """A model output tagged with its parameterization and timestep context."""

    value: torch.Tensor
    kind: str
    t: int | torch.Tensor
    table: ScheduleTable

    def __post_init__(self):
        if self.kind not in PREDICTION_KINDS:
            raise ConfigError(f"prediction kind must be one of {PREDICTION_KINDS}, got {self.kind!r}")


def _coefs(pred: Prediction, x_t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if pred.value.shape != x_t.shape:
        raise ConfigError(
            f"prediction and x_t shapes differ: {tuple(pred.value.shape)} vs {tuple(x_t.shape)}"
        )
    a = gather_coef(pred.table.signal_coef, pred.t, x_t)
    b = gather_coef(pred.table.noise_coef, pred.t, x_t)
    return a, b


def _require_nonzero(coef: torch.Tensor, name: str, conversion: str) -> None:
    if (coef == 0).any():
        raise SingularConversionError(
            f"{conversion} divides by {name}, which is zero at the requested timestep"
        )


def to_x0(pred: Prediction, x_t: torch.Tensor) -> torch.Tensor:
    """Clean-sample view of a prediction given the corrupted input it came from."""
    a, b = _coefs(pred, x_t)
    if pred.kind == "x0":
        return pred.value
    if pred.kind == "eps":
        _require_nonzero(a, "signal_coef", "eps -> x0")
        return (x_t - b * pred.value) / a
    return a * x_t - b * pred.value  # v


def to_eps(pred: Prediction, x_t: torch.Tensor) -> torch.Tensor:
    """Noise view of a prediction."""
    a, b = _coefs(pred, x_t)
    if pred.kind == "eps":
        return pred.value
    if pred.kind == "x0":
        _require_nonzero(b, "noise_coef", "x0 -> eps")
        return (x_t - a * pred.value) / b
    return b * x_t + a * pred.value  # v


def to_v(pred: Prediction, x_t: torch.Tensor) -> torch.Tensor:
    """Velocity view of a prediction."""
    a, b = _coefs(pred, x_t)
    if pred.kind == "v":
        return pred.value
    if pred.kind == "eps":
        _require_nonzero(a, "signal_coef", "eps -> v")
        return (pred.value - b * x_t) / a
    _require_nonzero(b, "noise_coef", "x0 -> v")
    return (a * x_t - pred.value) / b


_CONVERTERS = {"x0": to_x0, "eps": to_eps, "v": to_v}


def convert(pred: Prediction, x_t: torch.Tensor, kind: str) -> Prediction:
    """Re-express ``pred`` in another parameterization at the same timestep."""
    if kind not in PREDICTION_KINDS:
        raise ConfigError(f"prediction kind must be one of {PREDICTION_KINDS}, got {kind!r}")
    value = _CONVERTERS[kind](pred, x_t)
    return Prediction(value=value, kind=kind, t=pred.t, table=pred.table)
