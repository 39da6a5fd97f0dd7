"""Versioned binary checkpoints: magic "CAME1", config block, named parameter
blocks, optimizer block, schedule position and RNG state. Round-trips are
byte-identical."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .binio import atomic_write, pack_container, unpack_container
from .model import ModelConfig, ModelParams
from .optim import AdamWState

MAGIC = b"CAME1"
VERSION = 1


def params_hash(params: ModelParams) -> str:
    """Stable content hash of all parameter arrays."""
    h = hashlib.sha256()
    for name, arr in params.arrays.items():
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    opt_state: AdamWState | None = None
    schedule: dict | None = None
    position: dict | None = None
    rng_state: dict | None = None

    def hash8(self) -> str:
        return params_hash(self.params)[:8]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = dict(ckpt.params.arrays)
    opt_header = None
    if ckpt.opt_state is not None:
        s = ckpt.opt_state
        opt_header = {
            "lr": s.lr, "total_steps": s.total_steps, "weight_decay": s.weight_decay,
            "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
            "decay_floor": s.decay_floor, "step": s.step,
        }
        for name, m in s.m.items():
            arrays[f"opt.m.{name}"] = m
        for name, v in s.v.items():
            arrays[f"opt.v.{name}"] = v
    header = {
        "config": asdict(ckpt.config),
        "opt": opt_header,
        "schedule": ckpt.schedule,
        "position": ckpt.position,
        "rng_state": ckpt.rng_state,
        "n_params": len(ckpt.params.arrays),
        "param_names": list(ckpt.params.arrays),
    }
    atomic_write(path, pack_container(MAGIC, VERSION, header, arrays))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    header, arrays = unpack_container(data, MAGIC, VERSION)
    params = ModelParams({name: arrays[name] for name in header["param_names"]})
    opt_state = None
    if header["opt"] is not None:
        o = header["opt"]
        opt_state = AdamWState(
            lr=o["lr"], total_steps=o["total_steps"], weight_decay=o["weight_decay"],
            beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
            decay_floor=o["decay_floor"], step=o["step"],
            m={n: arrays[f"opt.m.{n}"] for n in header["param_names"] if f"opt.m.{n}" in arrays},
            v={n: arrays[f"opt.v.{n}"] for n in header["param_names"] if f"opt.v.{n}" in arrays},
        )
    return Checkpoint(
        config=ModelConfig(**header["config"]),
        params=params,
        opt_state=opt_state,
        schedule=header["schedule"],
        position=header["position"],
        rng_state=header["rng_state"],
    )
