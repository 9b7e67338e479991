"""Alternating one-step-generator training.

Each iteration draws clean data, corrupts it to a uniformly sampled level t,
forms the adversarial teacher input at t_k = max(t - k, 0) and the
consistency pair at t_m = max(t - m, 0), updates the discriminator first and
the generator second (non-saturating adversarial term plus annealed
SNR-weighted reconstruction and consistency), clips generator gradients only
and tracks an EMA of the generator.

All randomness flows through one ``torch.Generator`` owned by the state, so
fixed-seed runs are bit-reproducible and checkpoint resume continues the
exact stream.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field, asdict

import torch

from . import checkpoints
from .annealing import AnnealConfig, anneal_multiplier
from .datasets import SyntheticDataset, make_dataset
from .errors import ConfigError, NonFiniteLossError
from .evaluation import EvalReport, evaluate_samples
from .losses import (
    ADV_FORMULATIONS,
    ADV_LOSS_FORMS,
    consistency_loss,
    prepare_adversarial_pair,
    reconstruction_loss,
)
from .networks import (
    DiscriminatorSpec,
    EmaState,
    FrozenFeatureExtractor,
    GeneratorSpec,
    generate,
)
from .parameterizations import PREDICTION_KINDS, to_x0
from .prior import PriorStats, estimate_stats, sample_informative_prior
from .schedules import (
    SCHEDULE_PRESETS,
    ScheduleConfig,
    SkipMap,
    build_schedule,
    corrupt,
    forward_chain,
    schedule_preset,
    skip,
)

COUPLING_MODES = ("forward_chain", "shared_eps")
TEACHER_COUPLINGS = ("shared_eps", "independent")

METRIC_COLUMNS = ("step", "d_loss", "g_adv", "g_rec", "g_con", "anneal")
EVAL_COLUMNS = (
    "mode_coverage", "high_quality_fraction", "mmd", "w2_1d_projections",
    "d_loss_mean", "d_loss_min",
)


@dataclass
class NetworkConfig:
    hidden_width: int = 128
    num_blocks: int = 3
    embed_dim: int = 64
    disc_hidden_width: int = 128
    disc_num_blocks: int = 3
    disc_backbone: str = "fresh"  # fresh | half_generator
    conditioning: str = "none"
    num_classes: int = 0
    cond_dim: int = 0


@dataclass
class TrainConfig:
    dataset: str = "eight_gaussians"
    dataset_kwargs: dict = field(default_factory=dict)
    schedule: ScheduleConfig | str = "ddpm"
    skip: SkipMap = field(default_factory=lambda: SkipMap(250, 25))
    anneal: AnnealConfig = field(
        default_factory=lambda: AnnealConfig(num_segments=5, total_iterations=0)
    )
    network: NetworkConfig = field(default_factory=NetworkConfig)
    formulation: str = "cooperative"
    adv_loss_form: str = "nonsaturating"
    adv_weight: float = 1.0
    reconstruction_scale: float = 1.0
    consistency_scale: float = 1.0
    prediction_kind: str = "x0"
    generator_sigma: float = 0.0
    consistency_coupling: str = "forward_chain"
    adv_teacher_coupling: str = "shared_eps"
    informative_prior: bool = False
    prior_samples: int = 10000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas_g: tuple = (0.9, 0.999)
    betas_d: tuple = (0.0, 0.999)
    batch_size: int = 128
    total_iterations: int = 20000
    ema_decay: float = 0.9999
    grad_clip_g: float = 1.0
    distance: str = "mse"
    feature_net: str | None = None
    seed: int = 0
    eval_every: int = 2000
    eval_samples: int = 2000
    checkpoint_every: int = 10000
    stability_window: int = 500
    out_dir: str | None = None

    def resolve(self) -> "TrainConfig":
        """Validated copy with the schedule preset expanded and anneal horizon filled."""
        cfg = copy.deepcopy(self)
        if isinstance(cfg.schedule, str):
            cfg.schedule = schedule_preset(cfg.schedule)
        cfg.schedule.validate()
        cfg.skip.validate(cfg.schedule.num_steps)
        if cfg.anneal.total_iterations <= 0:
            cfg.anneal = dataclasses.replace(cfg.anneal, total_iterations=cfg.total_iterations)
        if cfg.anneal.enabled:
            cfg.anneal.validate()
        if cfg.formulation not in ADV_FORMULATIONS:
            raise ConfigError(
                f"formulation must be one of {ADV_FORMULATIONS}, got {cfg.formulation!r}"
            )
        if cfg.adv_loss_form not in ADV_LOSS_FORMS:
            raise ConfigError(
                f"adv_loss_form must be one of {ADV_LOSS_FORMS}, got {cfg.adv_loss_form!r}"
            )
        if cfg.prediction_kind not in PREDICTION_KINDS:
            raise ConfigError(
                f"prediction_kind must be one of {PREDICTION_KINDS}, got {cfg.prediction_kind!r}"
            )
        if cfg.consistency_coupling not in COUPLING_MODES:
            raise ConfigError(
                f"consistency_coupling must be one of {COUPLING_MODES}, "
                f"got {cfg.consistency_coupling!r}"
            )
        if cfg.adv_teacher_coupling not in TEACHER_COUPLINGS:
            raise ConfigError(
                f"adv_teacher_coupling must be one of {TEACHER_COUPLINGS}, "
                f"got {cfg.adv_teacher_coupling!r}"
            )
        if cfg.distance == "feature" and not cfg.feature_net:
            raise ConfigError("distance='feature' requires feature_net (a checkpoint path)")
        if cfg.total_iterations < 1:
            raise ConfigError(f"total_iterations must be >= 1, got {cfg.total_iterations}")
        if cfg.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
        return cfg

    def to_dict(self) -> dict:
        cfg = self.resolve()
        out = asdict(cfg)
        out["betas_g"] = list(cfg.betas_g)
        out["betas_d"] = list(cfg.betas_d)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if "schedule" in data and isinstance(data["schedule"], dict):
            data["schedule"] = ScheduleConfig(**data["schedule"])
        if "skip" in data and isinstance(data["skip"], dict):
            data["skip"] = SkipMap(**data["skip"])
        if "anneal" in data and isinstance(data["anneal"], dict):
            data["anneal"] = AnnealConfig(**{"total_iterations": 0, **data["anneal"]})
        if "network" in data and isinstance(data["network"], dict):
            data["network"] = NetworkConfig(**data["network"])
        for key in ("betas_g", "betas_d"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class TrainState:
    cfg: TrainConfig
    table: object
    dataset: SyntheticDataset
    G: torch.nn.Module
    D: torch.nn.Module
    ema: EmaState
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: torch.Generator
    step: int = 0
    prior_stats: PriorStats | None = None
    feature_extractor: object | None = None
    d_loss_history: list = field(default_factory=list)
    out_dir: str | None = None


def _build_networks(cfg: TrainConfig, data_shape):
    net = cfg.network
    gen_spec = GeneratorSpec(
        data_shape=tuple(data_shape),
        hidden_width=net.hidden_width,
        num_blocks=net.num_blocks,
        embed_dim=net.embed_dim,
        conditioning=net.conditioning,
        num_classes=net.num_classes,
        cond_dim=net.cond_dim,
        prediction_kind=cfg.prediction_kind,
    )
    G = gen_spec.build()
    disc_spec = DiscriminatorSpec(
        backbone=net.disc_backbone,
        data_shape=tuple(data_shape),
        hidden_width=net.disc_hidden_width,
        num_blocks=net.disc_num_blocks,
        embed_dim=net.embed_dim,
        conditioning=net.conditioning,
        num_classes=net.num_classes,
        cond_dim=net.cond_dim,
    )
    D = disc_spec.build(generator=G)
    return G, D, disc_spec


def init_state(cfg: TrainConfig) -> TrainState:
    cfg = cfg.resolve()
    torch.manual_seed(cfg.seed)
    dataset = make_dataset(cfg.dataset, **cfg.dataset_kwargs)
    table = build_schedule(cfg.schedule)
    G, D, _ = _build_networks(cfg, dataset.data_shape)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_g, betas=cfg.betas_g)
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_d, betas=cfg.betas_d)
    ema = EmaState.from_module(G, cfg.ema_decay)
    rng = torch.Generator()
    rng.manual_seed(cfg.seed)
    prior_stats = None
    if cfg.informative_prior:
        moment_rng = torch.Generator()
        moment_rng.manual_seed(cfg.seed * 9973 + 7)
        prior_stats = estimate_stats(dataset.sample(cfg.prior_samples, moment_rng))
    extractor = None
    if cfg.distance == "feature":
        net, _, _ = checkpoints.load_generator(cfg.feature_net)
        extractor = FrozenFeatureExtractor(net)
    return TrainState(
        cfg=cfg, table=table, dataset=dataset, G=G, D=D, ema=ema,
        opt_g=opt_g, opt_d=opt_d, rng=rng, prior_stats=prior_stats,
        feature_extractor=extractor,
    )


def _randn_like(x: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    return torch.randn(x.shape, dtype=x.dtype, generator=rng)


def train_step(state: TrainState, batch: torch.Tensor | None = None) -> dict:
    """One alternating update; returns the per-step metric row."""
    cfg = state.cfg
    table = state.table
    rng = state.rng
    n = state.step
    if n >= cfg.total_iterations:
        raise ConfigError(f"training already finished ({n} >= {cfg.total_iterations})")

    x0 = batch if batch is not None else state.dataset.sample(cfg.batch_size, rng)
    B = x0.shape[0]
    t = torch.randint(1, table.num_steps, (B,), generator=rng)
    eps = _randn_like(x0, rng)
    t_m = skip(t, cfg.skip.m)
    t_k = skip(t, cfg.skip.k)

    x_tm = corrupt(x0, eps, t_m, table)
    if cfg.consistency_coupling == "forward_chain":
        x_t = forward_chain(x0, x_tm, t_m, t, table, noise=_randn_like(x0, rng))
    else:
        x_t = corrupt(x0, eps, t, table)
    teacher_eps = eps if cfg.adv_teacher_coupling == "shared_eps" else _randn_like(x0, rng)
    x_tk = corrupt(x0, teacher_eps, t_k, table)

    with torch.no_grad():
        x_teacher = to_x0(generate(state.G, x_tk, t_k, table), x_tk)
        con_target = to_x0(generate(state.G, x_tm, t_m, table), x_tm)
        if cfg.generator_sigma > 0:
            x_teacher = x_teacher + cfg.generator_sigma * _randn_like(x_teacher, rng)

    pred = generate(state.G, x_t, t, table)
    x_student_raw = to_x0(pred, x_t)
    x_student = x_student_raw
    if cfg.generator_sigma > 0:
        x_student = x_student_raw + cfg.generator_sigma * _randn_like(x_student_raw, rng)
    _check_finite(state, x_teacher=x_teacher, x_student=x_student_raw)

    pair = prepare_adversarial_pair(
        cfg.formulation, x0=x0, x_student=x_student, x_teacher=x_teacher,
        t=t, table=table, generator=rng,
    )

    d_loss = pair.d_loss(state.D, form=cfg.adv_loss_form)
    _check_finite(state, d_loss=d_loss)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    # generator side against the just-updated discriminator
    g_adv = pair.g_loss(state.D)
    g_rec = reconstruction_loss(
        x_student_raw, x0, t, table, cfg.distance, state.feature_extractor
    )
    g_con = consistency_loss(
        x_student_raw, con_target, t, t_m, table, cfg.distance, state.feature_extractor
    )
    multiplier = anneal_multiplier(n, cfg.anneal)
    regression = cfg.anneal.base_weight * multiplier * (
        cfg.reconstruction_scale * g_rec + cfg.consistency_scale * g_con
    )
    g_total = cfg.adv_weight * g_adv + regression
    _check_finite(state, g_adv=g_adv, g_rec=g_rec, g_con=g_con)

    state.opt_g.zero_grad(set_to_none=True)
    g_total.backward()
    if cfg.grad_clip_g and cfg.grad_clip_g > 0:
        torch.nn.utils.clip_grad_norm_(state.G.parameters(), cfg.grad_clip_g)
    state.opt_g.step()
    state.ema.update(state.G)

    state.step = n + 1
    d_value = float(d_loss.detach())
    state.d_loss_history.append(d_value)
    cap = max(cfg.stability_window, 1)
    if len(state.d_loss_history) > cap:
        del state.d_loss_history[:-cap]
    return {
        "step": state.step,
        "d_loss": d_value,
        "g_adv": float(g_adv.detach()),
        "g_rec": float(g_rec.detach()),
        "g_con": float(g_con.detach()),
        "anneal": multiplier,
    }


def _check_finite(state: TrainState, **values) -> None:
    bad = {}
    for name, v in values.items():
        if not torch.isfinite(v).all():
            bad[name] = float(v.detach()) if v.numel() == 1 else "tensor with non-finite entries"
    if not bad:
        return
    snapshot = None
    if state.out_dir:
        snapshot = os.path.join(state.out_dir, f"diagnostic_step{state.step}.pt")
        checkpoints.save_checkpoint(_state_payload(state), snapshot)
    raise NonFiniteLossError(
        f"non-finite loss at step {state.step}: {bad}"
        + (f"; diagnostic snapshot written to {snapshot}" if snapshot else "")
    )


def sample_one_step(
    state: TrainState, n: int, use_ema: bool = False,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw prior noise (informative when configured), denoise once at t = T-1.

    Without an explicit ``generator`` the training stream is used (and
    advanced).
    """
    cfg = state.cfg
    rng = generator if generator is not None else state.rng
    if cfg.informative_prior and state.prior_stats is not None:
        noise = sample_informative_prior(state.prior_stats, state.table, n, rng)
    else:
        noise = torch.randn((n,) + tuple(state.dataset.data_shape), dtype=torch.float64,
                            generator=rng)
    net = state.G
    if use_ema:
        net = copy.deepcopy(state.G)
        state.ema.copy_to(net)
    with torch.no_grad():
        t_last = state.table.num_steps - 1
        pred = generate(net, noise, t_last, state.table)
        return to_x0(pred, noise)


def sample_from_checkpoint(path, n: int, use_ema: bool = False, seed: int = 0) -> torch.Tensor:
    """One-step sampling straight from a checkpoint file.

    Uses the informative prior when the stored config enables it and the
    checkpoint carries the moment estimates.
    """
    payload = checkpoints.load_checkpoint(path)
    net, table, _ = checkpoints.load_generator(payload, use_ema)
    gen = torch.Generator()
    gen.manual_seed(seed)
    data_shape = tuple(payload["meta"]["generator_spec"]["data_shape"])
    config = payload.get("config") or {}
    if config.get("informative_prior") and payload.get("prior_stats"):
        stats = PriorStats.from_state_dict(payload["prior_stats"])
        noise = sample_informative_prior(stats, table, n, gen)
    else:
        noise = torch.randn((n,) + data_shape, dtype=torch.float64, generator=gen)
    with torch.no_grad():
        pred = generate(net, noise, table.num_steps - 1, table)
        return to_x0(pred, noise)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def _state_payload(state: TrainState) -> dict:
    cfg = state.cfg
    return {
        "format": checkpoints.CHECKPOINT_FORMAT,
        "version": checkpoints.CHECKPOINT_VERSION,
        "meta": {
            "step": state.step,
            "prediction_kind": cfg.prediction_kind,
            "ema_decay": cfg.ema_decay,
            "schedule": asdict(cfg.schedule),
            "generator_spec": asdict(state.G.spec),
            "discriminator_spec": asdict(state.D.spec),
        },
        "config": cfg.to_dict(),
        "generator": state.G.state_dict(),
        "discriminator": state.D.state_dict(),
        "ema": state.ema.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng_state": state.rng.get_state(),
        "prior_stats": state.prior_stats.state_dict() if state.prior_stats else None,
        "d_loss_history": list(state.d_loss_history),
    }


def save_train_state(state: TrainState, path) -> None:
    checkpoints.save_checkpoint(_state_payload(state), path)


def load_train_state(path) -> TrainState:
    payload = checkpoints.load_checkpoint(path)
    if payload.get("config") is None:
        raise ConfigError(f"{path} has no training config; cannot resume from it")
    cfg = TrainConfig.from_dict(payload["config"])
    state = init_state(cfg)
    state.G.load_state_dict(payload["generator"])
    state.D.load_state_dict(payload["discriminator"])
    state.ema.load_state_dict(payload["ema"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.rng.set_state(payload["rng_state"])
    if payload.get("prior_stats"):
        state.prior_stats = PriorStats.from_state_dict(payload["prior_stats"])
    state.d_loss_history = list(payload.get("d_loss_history", []))
    state.step = int(payload["meta"]["step"])
    return state


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def _eval_generator(cfg: TrainConfig, step: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed((cfg.seed * 1_000_003 + step) % (2**63 - 1))
    return gen


def _mode_geometry(dataset: SyntheticDataset):
    if dataset.centers is None:
        return None, None
    radius = 0.05 if not dataset.mode_std else 3.0 * dataset.mode_std
    return dataset.centers, radius


def evaluate_state(state: TrainState, step: int | None = None) -> EvalReport:
    """Deterministic evaluation snapshot (seeded by config seed and step)."""
    cfg = state.cfg
    step = state.step if step is None else step
    gen = _eval_generator(cfg, step)
    samples = sample_one_step(state, cfg.eval_samples, generator=gen)
    reference = state.dataset.sample(cfg.eval_samples, gen)
    centers, radius = _mode_geometry(state.dataset)
    return evaluate_samples(
        samples, reference, centers=centers, radius=radius,
        d_loss_log=state.d_loss_history, window=min(cfg.stability_window,
                                                    max(len(state.d_loss_history), 1)),
        seed=cfg.seed,
    )


def save_sample_plot(samples: torch.Tensor, path: str, reference: torch.Tensor | None = None) -> None:
    """Scatter plot for 2-D samples, an image grid otherwise (lossless PNG)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = samples.detach().cpu().numpy()
    if data.ndim == 2 and data.shape[1] == 2:
        fig, ax = plt.subplots(figsize=(5, 5))
        if reference is not None:
            ref = reference.detach().cpu().numpy()
            ax.scatter(ref[:, 0], ref[:, 1], s=4, alpha=0.3, label="data")
        ax.scatter(data[:, 0], data[:, 1], s=4, alpha=0.5, label="samples")
        ax.legend(loc="upper right")
        ax.set_aspect("equal")
    else:
        n = min(64, data.shape[0])
        cols = 8
        rows = (n + cols - 1) // cols
        fig, axes = plt.subplots(rows, cols, figsize=(cols, rows))
        for i in range(rows * cols):
            ax = axes.flat[i]
            ax.axis("off")
            if i < n:
                img = data[i].transpose(1, 2, 0) if data[i].ndim == 3 else data[i]
                ax.imshow(((img + 1) / 2).clip(0, 1).squeeze())
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def run(
    cfg: TrainConfig | None = None, *, resume: str | None = None,
    out_dir: str | None = None, save_plots: bool = True,
) -> tuple[TrainState, EvalReport]:
    """Execute a full training run with periodic eval and checkpointing.

    ``resume`` restores a mid-run checkpoint (its stored config is
    authoritative) and continues to the configured horizon, appending to the
    metrics CSV.
    """
    if resume is not None:
        state = load_train_state(resume)
        cfg = state.cfg
    else:
        if cfg is None:
            raise ConfigError("run() needs a config or a checkpoint to resume from")
        cfg = cfg.resolve()
        state = init_state(cfg)
    out = out_dir or cfg.out_dir or f"runs/{cfg.dataset}-{cfg.formulation}-seed{cfg.seed}"
    os.makedirs(out, exist_ok=True)
    state.out_dir = out

    csv_path = os.path.join(out, "metrics.csv")
    new_file = not os.path.exists(csv_path)
    report: EvalReport | None = None
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(METRIC_COLUMNS + EVAL_COLUMNS)
        while state.step < cfg.total_iterations:
            metrics = train_step(state)
            step = state.step
            row = [metrics[c] for c in METRIC_COLUMNS]
            is_eval = (step % cfg.eval_every == 0) or step == cfg.total_iterations
            if is_eval:
                report = evaluate_state(state, step)
                row += [report.to_dict()[c] for c in EVAL_COLUMNS]
                with open(os.path.join(out, f"report_step{step}.json"), "w") as jf:
                    json.dump({"step": step, **report.to_dict()}, jf, indent=2)
                if save_plots:
                    gen = _eval_generator(cfg, step)
                    samples = sample_one_step(state, min(cfg.eval_samples, 2000), generator=gen)
                    reference = state.dataset.sample(min(cfg.eval_samples, 2000), gen)
                    save_sample_plot(samples, os.path.join(out, f"samples_step{step}.png"),
                                     reference)
            else:
                row += [""] * len(EVAL_COLUMNS)
            writer.writerow(row)
            if step % cfg.checkpoint_every == 0 or step == cfg.total_iterations:
                save_train_state(state, os.path.join(out, f"ckpt_step{step}.pt"))
                save_train_state(state, os.path.join(out, "ckpt_latest.pt"))
    if report is None:
        report = evaluate_state(state)
    return state, report


def _deep_update(dst: dict, src: dict) -> dict:
    for key, value in src.items():
        if isinstance(value, dict) and isinstance(dst.get(key), dict):
            _deep_update(dst[key], value)
        else:
            dst[key] = value
    return dst


def run_ablation(
    base_cfg: TrainConfig, variants: list[dict], out_dir: str, seeds: list[int] | None = None,
) -> list[dict]:
    """Run config variants (x seeds) and write a comparison table.

    Each variant is a mapping {"name": str, "overrides": {config fields}};
    nested override mappings merge into the base config.  Returns one result
    row per (variant, seed) and writes ``ablation.csv`` with the final metric
    set per row.
    """
    os.makedirs(out_dir, exist_ok=True)
    seeds = seeds or [base_cfg.seed]
    rows = []
    for variant in variants:
        name = variant.get("name")
        if not name:
            raise ConfigError("each ablation variant needs a 'name'")
        overrides = variant.get("overrides", {})
        for seed in seeds:
            data = _deep_update(base_cfg.to_dict(), copy.deepcopy(overrides))
            data["seed"] = seed
            cfg = TrainConfig.from_dict(data)
            run_dir = os.path.join(out_dir, f"{name}-seed{seed}")
            _, report = run(cfg, out_dir=run_dir, save_plots=False)
            rows.append({"variant": name, "seed": seed, **report.to_dict()})
    table_path = os.path.join(out_dir, "ablation.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "seed"] + list(EVAL_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    return rows
