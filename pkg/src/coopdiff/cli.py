"""Command-line entry points: train / sample / ablate / merge / adapt.

Config files are YAML trees whose keys mirror the TrainConfig field names
exactly (nested schedule / skip / anneal / network mappings; the schedule may
also be a preset name).
"""

from __future__ import annotations

import argparse
import json

import numpy as np
import torch
import yaml

from . import checkpoints
from .adaptation import AdaptConfig, run_adaptation, zero_snr_student_table
from .datasets import make_dataset
from .errors import ConfigError
from .networks import GeneratorSpec
from .trainer import TrainConfig, run, run_ablation, sample_from_checkpoint, save_sample_plot
from .weights import combine


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return TrainConfig.from_dict(data)


def cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else None
    state, report = run(cfg, resume=args.resume, out_dir=args.out)
    print(f"finished at step {state.step}; metrics in {state.out_dir}/metrics.csv")
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_sample(args) -> int:
    samples = sample_from_checkpoint(args.ckpt, args.n, use_ema=args.ema, seed=args.seed)
    out = args.out or "samples.npy"
    np.save(out, samples.numpy())
    print(f"wrote {tuple(samples.shape)} samples to {out}")
    if args.png:
        save_sample_plot(samples, args.png)
        print(f"wrote plot to {args.png}")
    return 0


def cmd_ablate(args) -> int:
    base = load_train_config(args.config)
    with open(args.matrix) as fh:
        matrix = yaml.safe_load(fh) or {}
    variants = matrix.get("variants")
    if not variants:
        raise ConfigError(f"matrix file {args.matrix} needs a 'variants' list")
    rows = run_ablation(base, variants, args.out, seeds=matrix.get("seeds"))
    width = max(len(r["variant"]) for r in rows) + 2
    print(f"{'variant'.ljust(width)}{'seed':>6}{'mmd':>12}{'coverage':>10}{'d_mean':>10}")
    for r in rows:
        print(
            f"{r['variant'].ljust(width)}{r['seed']:>6}{r['mmd']:>12.5f}"
            f"{r['mode_coverage']:>10.3f}{r['d_loss_mean']:>10.4f}"
        )
    print(f"table written to {args.out}/ablation.csv")
    return 0


def cmd_merge(args) -> int:
    base_payload = checkpoints.load_checkpoint(args.base)
    base = checkpoints.generator_weight_set(base_payload)
    up = checkpoints.generator_weight_set(args.up)
    tuned = checkpoints.generator_weight_set(args.tuned)
    merged = combine(base, up, tuned, args.alpha, args.beta,
                     strict_range=not args.no_strict_range)
    note = {"base": args.base, "up": args.up, "tuned": args.tuned,
            "alpha": args.alpha, "beta": args.beta}
    checkpoints.save_checkpoint(checkpoints.merged_checkpoint(base_payload, merged, note),
                                args.out)
    print(f"wrote merged checkpoint to {args.out}")
    return 0


def cmd_adapt(args) -> int:
    teacher, teacher_table, meta = checkpoints.load_generator(args.teacher)
    for p in teacher.parameters():
        p.requires_grad_(False)
    if args.student:
        student, _, _ = checkpoints.load_generator(args.student)
    else:
        spec_map = dict(meta["generator_spec"])
        spec_map["data_shape"] = tuple(spec_map["data_shape"])
        spec_map["prediction_kind"] = "v"
        torch.manual_seed(args.seed)
        student = GeneratorSpec(**spec_map).build()
    dataset = make_dataset(args.dataset)
    cfg = AdaptConfig(stage=args.stage, iterations=args.iterations,
                      batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                      literal_two_input=args.literal_two_input)
    result = run_adaptation(student, teacher, dataset, teacher_table, cfg)
    out_table = teacher_table if args.stage == 1 else zero_snr_student_table(teacher_table)
    payload = checkpoints.generator_checkpoint_payload(
        student, out_table, step=args.iterations,
        extra_meta={"adaptation_stage": args.stage, "teacher": args.teacher},
    )
    checkpoints.save_checkpoint(payload, args.out)
    print(
        f"stage {args.stage}: probe loss {result.probe_initial:.6g} -> "
        f"{result.probe_final:.6g}; wrote student to {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopdiff")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training from a config file")
    p.add_argument("--config", help="YAML config mirroring TrainConfig fields")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--out", help="output directory override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="one-step sampling from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ema", action="store_true", help="sample with the EMA weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output .npy path (default samples.npy)")
    p.add_argument("--png", help="optionally also write a plot")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ablate", help="run a variant matrix and tabulate results")
    p.add_argument("--config", required=True)
    p.add_argument("--matrix", required=True, help="YAML with 'variants' (+ optional 'seeds')")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("merge", help="three-way weight combination of checkpoints")
    p.add_argument("--base", required=True)
    p.add_argument("--up", required=True)
    p.add_argument("--tuned", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-strict-range", action="store_true",
                   help="allow alpha/beta outside (0, 1]")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("adapt", help="teacher-to-student adaptation stages")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--teacher", required=True, help="eps-prediction teacher checkpoint")
    p.add_argument("--student", help="student checkpoint (stage 2: the stage-1 result)")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default="eight_gaussians")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--literal-two-input", action="store_true")
    p.set_defaults(func=cmd_adapt)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
