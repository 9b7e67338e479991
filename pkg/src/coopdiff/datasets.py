"""Synthetic benchmark datasets.

Everything is sampled on the fly from a caller-provided torch.Generator, so
runs are fully reproducible and there is nothing to download.  2-D mixtures
expose their component centers and spread for mode-coverage evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from .errors import ConfigError


@dataclass
class SyntheticDataset:
    name: str
    data_shape: tuple[int, ...]
    sampler: Callable[[int, torch.Generator | None], torch.Tensor]
    centers: torch.Tensor | None = None   # (n_modes, dim) for mixtures
    mode_std: float | None = None         # per-mode isotropic std, for 3-sigma radii

    def sample(self, n: int, generator: torch.Generator | None = None) -> torch.Tensor:
        return self.sampler(n, generator)


def eight_gaussians(scale: float = 2.0, std: float = 0.05) -> SyntheticDataset:
    """Eight isotropic Gaussians on a circle of radius ``scale``."""
    angles = torch.arange(8, dtype=torch.float64) * (2 * math.pi / 8)
    centers = scale * torch.stack([torch.cos(angles), torch.sin(angles)], dim=1)

    def sampler(n, generator=None):
        idx = torch.randint(0, 8, (n,), generator=generator)
        noise = torch.randn((n, 2), dtype=torch.float64, generator=generator)
        return centers[idx] + std * noise

    return SyntheticDataset("eight_gaussians", (2,), sampler, centers=centers, mode_std=std)


def two_moons(noise: float = 0.05, scale: float = 2.0) -> SyntheticDataset:
    """Two interleaving half circles."""

    def sampler(n, generator=None):
        theta = math.pi * torch.rand(n, dtype=torch.float64, generator=generator)
        upper = torch.rand(n, generator=generator) < 0.5
        x = torch.where(upper, torch.cos(theta), 1.0 - torch.cos(theta))
        y = torch.where(upper, torch.sin(theta), 0.5 - torch.sin(theta))
        pts = torch.stack([x - 0.5, y - 0.25], dim=1) * scale
        return pts + noise * scale * torch.randn((n, 2), dtype=torch.float64, generator=generator)

    return SyntheticDataset("two_moons", (2,), sampler)


def swiss_roll(noise: float = 0.05, scale: float = 2.0) -> SyntheticDataset:
    """2-D spiral with radial noise, rescaled to roughly [-scale, scale]."""

    def sampler(n, generator=None):
        u = torch.rand(n, dtype=torch.float64, generator=generator)
        theta = 1.5 * math.pi * (1 + 2 * u)
        r = theta / (4.5 * math.pi)
        pts = torch.stack([r * torch.cos(theta), r * torch.sin(theta)], dim=1) * scale
        return pts + noise * scale * torch.randn((n, 2), dtype=torch.float64, generator=generator)

    return SyntheticDataset("swiss_roll", (2,), sampler)


def point_mass(points) -> SyntheticDataset:
    """Equal-weight delta mixture on the given points; a 1-point or 2-point
    version is the standard fixed-point oracle dataset."""
    pts = torch.as_tensor(points, dtype=torch.float64)
    if pts.dim() == 1:
        pts = pts.unsqueeze(0)

    def sampler(n, generator=None):
        idx = torch.randint(0, pts.shape[0], (n,), generator=generator)
        return pts[idx].clone()

    return SyntheticDataset(
        "point_mass", tuple(pts.shape[1:]), sampler, centers=pts, mode_std=0.0
    )


def synthetic_shapes(size: int = 32, channels: int = 3) -> SyntheticDataset:
    """Random axis-aligned rectangles and circles rendered in [-1, 1]^CHW.

    A stand-in image dataset for the optional small-image runs; nothing to
    download and the factors of variation (shape, position, color) are known.
    """

    def sampler(n, generator=None):
        imgs = -torch.ones((n, channels, size, size), dtype=torch.float64)
        ys, xs = torch.meshgrid(
            torch.arange(size, dtype=torch.float64),
            torch.arange(size, dtype=torch.float64),
            indexing="ij",
        )
        for i in range(n):
            kind = torch.randint(0, 2, (1,), generator=generator).item()
            cx, cy = (
                torch.randint(size // 4, 3 * size // 4, (2,), generator=generator).tolist()
            )
            half = torch.randint(size // 8, size // 4, (1,), generator=generator).item()
            color = torch.rand(channels, dtype=torch.float64, generator=generator) * 2 - 1
            if kind == 0:
                mask = (xs - cx).abs().le(half) & (ys - cy).abs().le(half)
            else:
                mask = ((xs - cx) ** 2 + (ys - cy) ** 2).le(half**2)
            for c in range(channels):
                imgs[i, c][mask] = color[c]
        return imgs

    return SyntheticDataset("synthetic_shapes", (channels, size, size), sampler)


_REGISTRY = {
    "eight_gaussians": eight_gaussians,
    "two_moons": two_moons,
    "swiss_roll": swiss_roll,
    "point_mass": point_mass,
    "synthetic_shapes": synthetic_shapes,
}


def make_dataset(name: str, **kwargs) -> SyntheticDataset:
    """Instantiate a dataset by registry name (used by config files)."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown dataset {name!r}; available: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)
