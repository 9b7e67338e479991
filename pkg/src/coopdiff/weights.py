"""Checkpoint arithmetic: three-way weight combination and low-rank deltas.

All operations are elementwise over name-aligned tensor maps.  Name or shape
mismatches are hard errors; silent partial merges corrupt models.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import ConfigError, WeightAlgebraError


def _arch_hash(tensors: dict[str, torch.Tensor]) -> str:
    digest = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name]
        digest.update(f"{name}:{tuple(t.shape)}:{t.dtype}".encode())
    return digest.hexdigest()[:16]


@dataclass
class WeightSet:
    """Named tensor collection with an architecture fingerprint."""

    tensors: dict[str, torch.Tensor]
    arch_hash: str = ""

    def __post_init__(self):
        if not self.arch_hash:
            self.arch_hash = _arch_hash(self.tensors)

    @classmethod
    def from_module(cls, module: nn.Module) -> "WeightSet":
        return cls({k: v.detach().clone() for k, v in module.state_dict().items()})

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]


@dataclass
class WeightDelta:
    """Per-tensor updates: dense difference tensors or (up, down) factor pairs.

    A factor pair materializes as ``up @ down`` with up (out, r), down (r, in)
    against a 2-D target.
    """

    entries: dict[str, torch.Tensor | tuple[torch.Tensor, torch.Tensor]] = field(
        default_factory=dict
    )

    def materialize(self, name: str, target_shape: tuple[int, ...]) -> torch.Tensor:
        entry = self.entries[name]
        if torch.is_tensor(entry):
            dense = entry
        else:
            up, down = entry
            if up.dim() != 2 or down.dim() != 2 or up.shape[1] != down.shape[0]:
                raise WeightAlgebraError(
                    f"low-rank factors for {name!r} are not conformable: "
                    f"up {tuple(up.shape)}, down {tuple(down.shape)}"
                )
            dense = up @ down
        if tuple(dense.shape) != tuple(target_shape):
            raise WeightAlgebraError(
                f"delta for {name!r} has shape {tuple(dense.shape)}, "
                f"target has {tuple(target_shape)}"
            )
        return dense


def _check_aligned(*sets: WeightSet) -> None:
    names = sets[0].names()
    for other in sets[1:]:
        if other.names() != names:
            missing = set(names) ^ set(other.names())
            raise WeightAlgebraError(f"weight sets differ in tensor names: {sorted(missing)}")
    for name in names:
        shapes = {tuple(s.tensors[name].shape) for s in sets}
        if len(shapes) > 1:
            raise WeightAlgebraError(f"shape mismatch for {name!r}: {sorted(shapes)}")


def combine(
    base: WeightSet, up: WeightSet, tuned: WeightSet, alpha: float, beta: float,
    *, strict_range: bool = True,
) -> WeightSet:
    """base + alpha * (up - base) + beta * (tuned - base), elementwise.

    alpha and beta are validated to lie in (0, 1]; pass ``strict_range=False``
    to evaluate the combination outside that range.
    """
    if strict_range:
        for label, value in (("alpha", alpha), ("beta", beta)):
            if not (0.0 < value <= 1.0):
                raise ConfigError(
                    f"{label}={value} outside (0, 1]; pass strict_range=False to override"
                )
    _check_aligned(base, up, tuned)
    out = {
        name: base.tensors[name]
        + alpha * (up.tensors[name] - base.tensors[name])
        + beta * (tuned.tensors[name] - base.tensors[name])
        for name in base.names()
    }
    return WeightSet(out)


def apply_lora(base: WeightSet, delta: WeightDelta, scale: float = 1.0) -> WeightSet:
    """base + scale * delta on the targeted tensors; untargeted tensors pass through."""
    unknown = set(delta.entries) - set(base.tensors)
    if unknown:
        raise WeightAlgebraError(f"delta targets tensors absent from the base: {sorted(unknown)}")
    out = {}
    for name, tensor in base.tensors.items():
        if name in delta.entries:
            out[name] = tensor + scale * delta.materialize(name, tuple(tensor.shape))
        else:
            out[name] = tensor.clone()
    return WeightSet(out)
