"""Checkpoint containers: flat named-array files plus a JSON config sidecar.

A checkpoint is a directory holding ``params.npz`` (one named array per
parameter, names equal to the module's state-dict keys) and ``config.json``
describing how to rebuild the module. Names are stable across versions.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

PARAMS_FILE = "params.npz"
CONFIG_FILE = "config.json"


def state_arrays(module: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_arrays(module: torch.nn.Module, arrays: dict) -> None:
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def param_hash(module: torch.nn.Module) -> str:
    """Order-stable SHA-256 over parameter names and exact bytes."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_module(ckpt_dir, module: torch.nn.Module, kind: str, config: dict) -> Path:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    np.savez(ckpt_dir / PARAMS_FILE, **state_arrays(module))
    with open(ckpt_dir / CONFIG_FILE, "w", encoding="utf-8") as fh:
        json.dump({"kind": kind, "config": config}, fh, indent=2, sort_keys=True)
    return ckpt_dir


def read_module_meta(ckpt_dir) -> dict:
    with open(Path(ckpt_dir) / CONFIG_FILE, encoding="utf-8") as fh:
        return json.load(fh)


def load_module(ckpt_dir) -> torch.nn.Module:
    """Rebuild a module from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta = read_module_meta(ckpt_dir)
    module = _build_from_meta(meta)
    with np.load(ckpt_dir / PARAMS_FILE) as data:
        load_state_arrays(module, dict(data))
    return module


def _build_from_meta(meta: dict) -> torch.nn.Module:
    kind, config = meta["kind"], meta["config"]
    if kind == "fas_model":
        from .models import FasModelConfig, ToyFasModel

        return ToyFasModel(FasModelConfig.from_dict(config))
    if kind == "sre":
        from .sre import SreConfig, SpoofRegionEstimator

        return SpoofRegionEstimator(SreConfig.from_dict(config))
    if kind == "binary_head":
        from .models import BinaryHead

        return BinaryHead(config["c_in"], seed=config.get("seed", 0))
    if kind == "discriminator":
        from .wrapper import DiscriminatorConfig, MultiScaleDiscriminator

        return MultiScaleDiscriminator(DiscriminatorConfig.from_dict(config))
    raise ConfigError(f"unknown checkpoint kind {kind!r}")
