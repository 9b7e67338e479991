"""Desk-scale trainable networks.

A residual MLP pair (generator/discriminator) covers 2-D benchmark data; a
compact UNet pair covers small images.  Both discriminators can be built
fresh or from the first half of a pretrained generator (downsampling path +
bottleneck for the UNet, the leading residual blocks for the MLP) followed by
a pooled scalar head.  Everything runs in float64 on CPU.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .errors import ConfigError, ContractViolationError
from .parameterizations import PREDICTION_KINDS, Prediction
from .schedules import ScheduleTable

CONDITIONING_MODES = ("none", "class", "embedding")


def timestep_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) timesteps; returns (B, dim)."""
    if isinstance(t, (int, float)):
        t = torch.tensor([float(t)])
    t = t.reshape(-1).to(torch.float64)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


class _Conditioner(nn.Module):
    """Maps (timestep, optional condition) to a shared embedding vector."""

    def __init__(self, embed_dim: int, conditioning: str, num_classes: int, cond_dim: int):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise ConfigError(
                f"conditioning must be one of {CONDITIONING_MODES}, got {conditioning!r}"
            )
        self.conditioning = conditioning
        self.embed_dim = embed_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim)
        )
        if conditioning == "class":
            if num_classes < 1:
                raise ConfigError("class conditioning requires num_classes >= 1")
            self.cond_embed = nn.Embedding(num_classes, embed_dim)
        elif conditioning == "embedding":
            if cond_dim < 1:
                raise ConfigError("embedding conditioning requires cond_dim >= 1")
            self.cond_embed = nn.Linear(cond_dim, embed_dim)

    def forward(self, t, cond, batch: int) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.embed_dim))
        if emb.shape[0] == 1 and batch > 1:
            emb = emb.expand(batch, -1)
        if self.conditioning == "none":
            if cond is not None:
                raise ConfigError("network is unconditional but a condition was provided")
            return emb
        if cond is None:
            raise ConfigError(f"network expects {self.conditioning!r} conditioning input")
        if self.conditioning == "class":
            cond = cond.long()
        return emb + self.cond_embed(cond)


class ResidualBlock(nn.Module):
    def __init__(self, width: int, embed_dim: int):
        super().__init__()
        self.lin1 = nn.Linear(width, width)
        self.lin2 = nn.Linear(width, width)
        self.emb_proj = nn.Linear(embed_dim, width)
        self.act = nn.SiLU()

    def forward(self, h, emb):
        out = self.act(self.lin1(h) + self.emb_proj(emb))
        return h + self.lin2(out)


@dataclass
class GeneratorSpec:
    """Shape/width/conditioning description of a denoising generator.

    1-D data shapes build a residual MLP; 3-D (C, H, W) shapes build a UNet.
    """

    data_shape: tuple[int, ...] = (2,)
    hidden_width: int = 128
    num_blocks: int = 3
    embed_dim: int = 64
    conditioning: str = "none"
    num_classes: int = 0
    cond_dim: int = 0
    prediction_kind: str = "x0"
    zero_init_head: bool = True

    def validate(self) -> None:
        if self.prediction_kind not in PREDICTION_KINDS:
            raise ConfigError(
                f"prediction_kind must be one of {PREDICTION_KINDS}, got {self.prediction_kind!r}"
            )
        if len(self.data_shape) not in (1, 3):
            raise ConfigError(
                f"data_shape must be 1-D (features,) or 3-D (C, H, W), got {self.data_shape!r}"
            )

    def build(self) -> "MLPGenerator | UNetGenerator":
        self.validate()
        if len(self.data_shape) == 1:
            return MLPGenerator(self)
        return UNetGenerator(self)


@dataclass
class DiscriminatorSpec:
    """Time-conditioned scalar-logit discriminator description."""

    backbone: str = "fresh"  # fresh | half_generator
    data_shape: tuple[int, ...] = (2,)
    hidden_width: int = 128
    num_blocks: int = 3
    embed_dim: int = 64
    conditioning: str = "none"
    num_classes: int = 0
    cond_dim: int = 0

    def build(self, generator=None):
        if self.backbone == "fresh":
            if len(self.data_shape) == 1:
                return MLPDiscriminator(self)
            return UNetDiscriminator(self)
        if self.backbone == "half_generator":
            if generator is None:
                raise ConfigError("half_generator backbone requires a pretrained generator")
            return half_discriminator_from_generator(generator)
        raise ConfigError(f"backbone must be 'fresh' or 'half_generator', got {self.backbone!r}")


class MLPGenerator(nn.Module):
    """Residual MLP denoiser for flat data; output parameterization in spec."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.kind = spec.prediction_kind
        dim = spec.data_shape[0]
        self.conditioner = _Conditioner(
            spec.embed_dim, spec.conditioning, spec.num_classes, spec.cond_dim
        )
        self.in_proj = nn.Linear(dim, spec.hidden_width)
        self.blocks = nn.ModuleList(
            ResidualBlock(spec.hidden_width, spec.embed_dim) for _ in range(spec.num_blocks)
        )
        # bottleneck = end of the first half of the trunk
        self.bottleneck_index = (spec.num_blocks + 1) // 2
        self.out = nn.Linear(spec.hidden_width, dim)
        if spec.zero_init_head:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)
        self.double()

    def _trunk(self, x, t, cond, upto: int | None = None):
        emb = self.conditioner(t, cond, x.shape[0])
        h = torch.nn.functional.silu(self.in_proj(x))
        for block in self.blocks[: len(self.blocks) if upto is None else upto]:
            h = block(h, emb)
        return h, emb

    def features(self, x, t, cond=None) -> torch.Tensor:
        """Bottleneck activations (after the first half of the blocks)."""
        h, _ = self._trunk(x, t, cond, upto=self.bottleneck_index)
        return h

    def forward(self, x, t, cond=None) -> torch.Tensor:
        h, _ = self._trunk(x, t, cond)
        return self.out(h)


class MLPDiscriminator(nn.Module):
    """Time-conditioned scalar critic with the same trunk shape as MLPGenerator."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        dim = spec.data_shape[0]
        self.conditioner = _Conditioner(
            spec.embed_dim, spec.conditioning, spec.num_classes, spec.cond_dim
        )
        self.in_proj = nn.Linear(dim, spec.hidden_width)
        self.blocks = nn.ModuleList(
            ResidualBlock(spec.hidden_width, spec.embed_dim) for _ in range(spec.num_blocks)
        )
        self.head = nn.Sequential(
            nn.Linear(spec.hidden_width, spec.hidden_width), nn.SiLU(),
            nn.Linear(spec.hidden_width, 1),
        )
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)
        self.reused_parameters = 0
        self.double()

    def forward(self, x, t, cond=None) -> torch.Tensor:
        emb = self.conditioner(t, cond, x.shape[0])
        h = torch.nn.functional.silu(self.in_proj(x))
        for block in self.blocks:
            h = block(h, emb)
        return self.head(h).squeeze(-1)


# ---------------------------------------------------------------------------
# Compact UNet for small images
# ---------------------------------------------------------------------------


class ConvResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, embed_dim: int):
        super().__init__()
        groups = math.gcd(8, c_in)
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(math.gcd(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(embed_dim, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x, emb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class UNetGenerator(nn.Module):
    """Two-level UNet with a wide bottleneck; for (C, H, W) data, H, W >= 8."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.kind = spec.prediction_kind
        c_data = spec.data_shape[0]
        c0 = spec.hidden_width // 4
        c1 = spec.hidden_width // 2
        c2 = spec.hidden_width
        self.conditioner = _Conditioner(
            spec.embed_dim, spec.conditioning, spec.num_classes, spec.cond_dim
        )
        self.in_conv = nn.Conv2d(c_data, c0, 3, padding=1)
        self.down1 = ConvResBlock(c0, c0, spec.embed_dim)
        self.pool1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.down2 = ConvResBlock(c1, c1, spec.embed_dim)
        self.pool2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid1 = ConvResBlock(c2, c2, spec.embed_dim)
        self.mid2 = ConvResBlock(c2, c2, spec.embed_dim)
        self.up2 = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
        self.dec2 = ConvResBlock(c1 + c1, c1, spec.embed_dim)
        self.up1 = nn.ConvTranspose2d(c1, c0, 4, stride=2, padding=1)
        self.dec1 = ConvResBlock(c0 + c0, c0, spec.embed_dim)
        self.out = nn.Conv2d(c0, c_data, 1)
        if spec.zero_init_head:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)
        self.double()

    def _encode(self, x, emb):
        h0 = self.down1(self.in_conv(x), emb)
        h1 = self.down2(self.pool1(h0), emb)
        mid = self.mid2(self.mid1(self.pool2(h1), emb), emb)
        return h0, h1, mid

    def features(self, x, t, cond=None) -> torch.Tensor:
        """Bottleneck activations (downsampling path output)."""
        emb = self.conditioner(t, cond, x.shape[0])
        _, _, mid = self._encode(x, emb)
        return mid

    def forward(self, x, t, cond=None) -> torch.Tensor:
        emb = self.conditioner(t, cond, x.shape[0])
        h0, h1, mid = self._encode(x, emb)
        u2 = self.dec2(torch.cat([self.up2(mid), h1], dim=1), emb)
        u1 = self.dec1(torch.cat([self.up1(u2), h0], dim=1), emb)
        return self.out(u1)


class UNetDiscriminator(nn.Module):
    """Downsampling half of the UNet followed by a pooled scalar head."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        gen_spec = GeneratorSpec(
            data_shape=spec.data_shape,
            hidden_width=spec.hidden_width,
            embed_dim=spec.embed_dim,
            conditioning=spec.conditioning,
            num_classes=spec.num_classes,
            cond_dim=spec.cond_dim,
        )
        ref = UNetGenerator(gen_spec)
        self.conditioner = ref.conditioner
        self.in_conv = ref.in_conv
        self.down1, self.pool1 = ref.down1, ref.pool1
        self.down2, self.pool2 = ref.down2, ref.pool2
        self.mid1, self.mid2 = ref.mid1, ref.mid2
        width = spec.hidden_width
        self.head = nn.Sequential(nn.Linear(width, width), nn.SiLU(), nn.Linear(width, 1))
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)
        self.reused_parameters = 0
        self.double()

    def forward(self, x, t, cond=None) -> torch.Tensor:
        emb = self.conditioner(t, cond, x.shape[0])
        h = self.down1(self.in_conv(x), emb)
        h = self.down2(self.pool1(h), emb)
        h = self.mid2(self.mid1(self.pool2(h), emb), emb)
        pooled = h.mean(dim=(2, 3))
        return self.head(pooled).squeeze(-1)


def half_discriminator_from_generator(gen) -> "MLPDiscriminator | UNetDiscriminator":
    """Build a discriminator whose backbone copies the first half of ``gen``.

    For the MLP that is the input projection plus the leading residual blocks
    up to the bottleneck; for the UNet it is the whole downsampling path and
    bottleneck.  The head is fresh and zero-initialized.
    """
    spec = gen.spec
    d_spec = DiscriminatorSpec(
        backbone="half_generator",
        data_shape=spec.data_shape,
        hidden_width=spec.hidden_width,
        num_blocks=getattr(gen, "bottleneck_index", spec.num_blocks),
        embed_dim=spec.embed_dim,
        conditioning=spec.conditioning,
        num_classes=spec.num_classes,
        cond_dim=spec.cond_dim,
    )
    if isinstance(gen, MLPGenerator):
        disc = MLPDiscriminator(d_spec)
        pairs = [(disc.in_proj, gen.in_proj), (disc.conditioner, gen.conditioner)]
        pairs += [(disc.blocks[i], gen.blocks[i]) for i in range(gen.bottleneck_index)]
    elif isinstance(gen, UNetGenerator):
        disc = UNetDiscriminator(d_spec)
        pairs = [
            (disc.in_conv, gen.in_conv), (disc.conditioner, gen.conditioner),
            (disc.down1, gen.down1), (disc.pool1, gen.pool1),
            (disc.down2, gen.down2), (disc.pool2, gen.pool2),
            (disc.mid1, gen.mid1), (disc.mid2, gen.mid2),
        ]
    else:
        raise ConfigError(f"cannot build a half-backbone discriminator from {type(gen).__name__}")
    reused = 0
    for dst, src in pairs:
        dst.load_state_dict(copy.deepcopy(src.state_dict()))
        reused += sum(p.numel() for p in src.parameters())
    disc.reused_parameters = reused
    return disc


class FrozenFeatureExtractor(nn.Module):
    """Frozen copy of a network used as a fixed feature map at timestep 0."""

    def __init__(self, net: nn.Module):
        super().__init__()
        if not hasattr(net, "features"):
            raise ConfigError(f"{type(net).__name__} exposes no bottleneck features")
        self.net = copy.deepcopy(net)
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def features(self, z, t=0, cond=None) -> torch.Tensor:
        return self.net.features(z, t, cond)

    def forward(self, z, cond=None) -> torch.Tensor:
        return self.features(z, 0, cond)


def extract_features(extractor: nn.Module, z: torch.Tensor, cond=None) -> torch.Tensor:
    """Bottleneck activations of a frozen network at the fixed timestep 0."""
    if any(p.requires_grad for p in extractor.parameters()):
        raise ContractViolationError("feature extractor must be frozen (requires_grad=False)")
    if not hasattr(extractor, "features"):
        raise ConfigError(f"{type(extractor).__name__} exposes no bottleneck features")
    return extractor.features(z, 0, cond)


# ---------------------------------------------------------------------------
# Spec-level operations and EMA
# ---------------------------------------------------------------------------


def generate(G: nn.Module, x_t: torch.Tensor, t, table: ScheduleTable, cond=None) -> Prediction:
    """Run the denoising generator; the result is tagged with its parameterization."""
    value = G(x_t, t, cond)
    return Prediction(value=value, kind=G.kind, t=t, table=table)


def discriminate(D: nn.Module, x: torch.Tensor, t, cond=None) -> torch.Tensor:
    """One real logit per batch element."""
    if not torch.isfinite(x).all():
        raise ValueError("discriminator input contains non-finite values")
    return D(x, t, cond)


class EmaState:
    """Exponential moving average of a module's parameters."""

    def __init__(self, shadow: dict[str, torch.Tensor], decay: float):
        if not (0.0 <= decay <= 1.0):
            raise ConfigError(f"EMA decay must lie in [0, 1], got {decay}")
        self.shadow = shadow
        self.decay = decay

    @classmethod
    def from_module(cls, module: nn.Module, decay: float) -> "EmaState":
        shadow = {k: v.detach().clone() for k, v in module.state_dict().items()}
        return cls(shadow, decay)

    def update(self, module: nn.Module) -> "EmaState":
        live = module.state_dict()
        if set(live) != set(self.shadow):
            raise ConfigError("EMA shadow and live module have different parameter names")
        with torch.no_grad():
            for name, value in live.items():
                if value.shape != self.shadow[name].shape:
                    raise ConfigError(
                        f"EMA shape mismatch for {name}: "
                        f"{tuple(self.shadow[name].shape)} vs {tuple(value.shape)}"
                    )
                self.shadow[name].mul_(self.decay).add_(value, alpha=1.0 - self.decay)
        return self

    def copy_to(self, module: nn.Module) -> None:
        module.load_state_dict(self.shadow)

    def state_dict(self) -> dict:
        return {"decay": self.decay, "shadow": self.shadow}

    def load_state_dict(self, state: dict) -> None:
        self.decay = state["decay"]
        self.shadow = state["shadow"]


def ema_update(ema: EmaState, module: nn.Module) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * live, name/shape checked."""
    return ema.update(module)
