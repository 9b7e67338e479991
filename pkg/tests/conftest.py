import pytest
import torch

from coopdiff.networks import DiscriminatorSpec, GeneratorSpec
from coopdiff.schedules import ScheduleConfig, ScheduleTable


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def synthetic_table(alpha_bar) -> ScheduleTable:
    """Hand-built table for exact-coefficient edge cases."""
    ab = torch.tensor(alpha_bar, dtype=torch.float64)
    prev = torch.cat([torch.ones(1, dtype=torch.float64), ab[:-1]])
    betas = 1.0 - ab / prev
    cfg = ScheduleConfig(num_steps=len(alpha_bar))
    return ScheduleTable(cfg, betas, ab)


def fd_gradients(loss_fn, params, h: float = 1e-5):
    """Central finite differences of a deterministic scalar closure."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def autodiff_gradients(loss_fn, params):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def max_rel_error(fd, ad, floor: float = 1e-6) -> float:
    worst = 0.0
    for f, a in zip(fd, ad):
        denom = torch.maximum(torch.maximum(f.abs(), a.abs()), torch.tensor(floor))
        worst = max(worst, float(((f - a).abs() / denom).max()))
    return worst


def tiny_generator(kind: str = "x0", zero_init_head: bool = True, dim: int = 2):
    """A <=100-parameter generator for finite-difference probes."""
    spec = GeneratorSpec(
        data_shape=(dim,), hidden_width=3, num_blocks=1, embed_dim=3,
        prediction_kind=kind, zero_init_head=zero_init_head,
    )
    return spec.build()


def tiny_discriminator(dim: int = 2, randomize_head: bool = False):
    spec = DiscriminatorSpec(data_shape=(dim,), hidden_width=3, num_blocks=1, embed_dim=3)
    D = spec.build()
    if randomize_head:
        for p in D.head.parameters():
            torch.nn.init.normal_(p, std=0.5)
        D.double()
    return D


def param_count(module) -> int:
    return sum(p.numel() for p in module.parameters())
