"""Checkpoint container: a named-tensor archive plus a metadata record.

Layout (a single ``torch.save`` file, loadable with ``weights_only=True``):

    format            "coopdiff.checkpoint"
    version           1
    meta              step, prediction_kind, ema_decay, schedule (mapping),
                      generator_spec / discriminator_spec (mappings)
    config            full training config mapping (optional)
    generator         generator state_dict
    discriminator     optional state_dict
    ema               optional {decay, shadow}
    opt_g / opt_d     optional optimizer state dicts
    rng_state         optional torch.Generator state
    prior_stats       optional {mean, std, n_samples}
    d_loss_history    trailing discriminator losses (floats)

Only plain containers and tensors are stored, so files stay readable across
package versions.
"""

from __future__ import annotations

from dataclasses import asdict

import torch

from .errors import ConfigError
from .networks import EmaState, GeneratorSpec
from .prior import PriorStats
from .schedules import ScheduleConfig, ScheduleTable, build_schedule
from .weights import WeightSet

CHECKPOINT_FORMAT = "coopdiff.checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(payload: dict, path) -> None:
    payload = dict(payload)
    payload.setdefault("format", CHECKPOINT_FORMAT)
    payload.setdefault("version", CHECKPOINT_VERSION)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return payload


def generator_spec_from_meta(meta: dict) -> GeneratorSpec:
    spec = dict(meta["generator_spec"])
    spec["data_shape"] = tuple(spec["data_shape"])
    return GeneratorSpec(**spec)


def schedule_from_meta(meta: dict) -> ScheduleTable:
    return build_schedule(ScheduleConfig(**meta["schedule"]))


def load_generator(path_or_payload, use_ema: bool = False):
    """Rebuild (net, table, meta) from a checkpoint; optionally the EMA weights."""
    payload = (
        path_or_payload if isinstance(path_or_payload, dict) else load_checkpoint(path_or_payload)
    )
    meta = payload["meta"]
    net = generator_spec_from_meta(meta).build()
    if use_ema:
        if not payload.get("ema"):
            raise ConfigError("checkpoint carries no EMA weights")
        net.load_state_dict(payload["ema"]["shadow"])
    else:
        net.load_state_dict(payload["generator"])
    return net, schedule_from_meta(meta), meta


def generator_weight_set(path_or_payload, use_ema: bool = False) -> WeightSet:
    payload = (
        path_or_payload if isinstance(path_or_payload, dict) else load_checkpoint(path_or_payload)
    )
    if use_ema:
        if not payload.get("ema"):
            raise ConfigError("checkpoint carries no EMA weights")
        tensors = payload["ema"]["shadow"]
    else:
        tensors = payload["generator"]
    return WeightSet({k: v.clone() for k, v in tensors.items()})


def generator_checkpoint_payload(
    net, table: ScheduleTable, *, step: int = 0, ema: EmaState | None = None,
    prior_stats: PriorStats | None = None, extra_meta: dict | None = None,
    config: dict | None = None,
) -> dict:
    """Minimal standalone checkpoint for a generator network."""
    meta = {
        "step": step,
        "prediction_kind": net.kind,
        "ema_decay": ema.decay if ema is not None else None,
        "schedule": asdict(table.config),
        "generator_spec": asdict(net.spec),
        "discriminator_spec": None,
    }
    if extra_meta:
        meta.update(extra_meta)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "config": config,
        "generator": net.state_dict(),
        "discriminator": None,
        "ema": ema.state_dict() if ema is not None else None,
        "opt_g": None,
        "opt_d": None,
        "rng_state": None,
        "prior_stats": prior_stats.state_dict() if prior_stats is not None else None,
        "d_loss_history": [],
    }


def merged_checkpoint(base_payload: dict, merged: WeightSet, note: dict) -> dict:
    """Copy of a checkpoint with the generator tensors replaced by a merge result.

    Optimizer/EMA/rng blobs are dropped; the merge parameters are recorded in
    the metadata.
    """
    base_tensors = base_payload["generator"]
    if set(base_tensors) != set(merged.tensors):
        raise ConfigError("merged weight set does not match the base checkpoint's tensors")
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": {**base_payload["meta"], "merge": note},
        "config": base_payload.get("config"),
        "generator": {k: v.clone() for k, v in merged.tensors.items()},
        "discriminator": None,
        "ema": None,
        "opt_g": None,
        "opt_d": None,
        "rng_state": None,
        "prior_stats": base_payload.get("prior_stats"),
        "d_loss_history": [],
    }
    return payload
