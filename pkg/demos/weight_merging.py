"""Checkpoint arithmetic: the three-way combination and low-rank deltas.

The combination  base + alpha*(up - base) + beta*(tuned - base)  transplants
two independent fine-tunings (an upscaled base and a one-step-tuned base)
onto one set of weights without any extra training.

Run:  python3 demos/weight_merging.py
"""

import torch

from coopdiff import GeneratorSpec, WeightDelta, WeightSet, apply_lora, combine

torch.manual_seed(0)
spec = GeneratorSpec(data_shape=(2,), hidden_width=16, num_blocks=2, zero_init_head=False)
base = WeightSet.from_module(spec.build())
up = WeightSet.from_module(spec.build())      # stands in for the upscaled fine-tune
tuned = WeightSet.from_module(spec.build())   # stands in for the one-step fine-tune

merged = combine(base, up, tuned, alpha=1.0, beta=1.0)
name = "blocks.0.lin1.weight"
check = up[name] + tuned[name] - base[name]
print(f"alpha=beta=1 on {name}: max deviation from up+tuned-base = "
      f"{(merged[name] - check).abs().max():.2e}")

half = combine(base, up, tuned, alpha=0.5, beta=0.5)
print(f"alpha=beta=0.5 interpolates: base->merged distance "
      f"{(half[name] - base[name]).norm():.4f} vs full {(merged[name] - base[name]).norm():.4f}")

# low-rank delta on a single tensor; the rest passes through untouched
target = base[name]
rank = 2
up_factor = torch.randn(target.shape[0], rank, dtype=torch.float64) * 0.01
down_factor = torch.randn(rank, target.shape[1], dtype=torch.float64)
delta = WeightDelta({name: (up_factor, down_factor)})
patched = apply_lora(base, delta, scale=0.8)
print(f"\nlora on {name}: changed by {(patched[name] - base[name]).norm():.4f}")
other = "blocks.0.lin2.weight"
print(f"untargeted {other} unchanged: "
      f"{bool(torch.equal(patched[other], base[other]))}")
