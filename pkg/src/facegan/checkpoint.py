"""Self-describing checkpoint container shared by all trainers.

A checkpoint stores, per named network: layer shapes and weights, optimizer
state, the global step counter and a hash of the training config. Hashing is
done over a canonical serialization of the tensors (not the pickle bytes) so
two runs with identical seeds produce identical hashes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

FORMAT = "facegan-checkpoint-v1"


def config_hash(config) -> str:
    """Stable hash of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _state_shapes(state: dict) -> dict:
    return {k: list(v.shape) for k, v in state.items() if torch.is_tensor(v)}


def save_checkpoint(path, *, step: int, config: dict,
                    modules: dict[str, torch.nn.Module],
                    optimizers: dict[str, torch.optim.Optimizer] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "step": int(step),
        "config": config,
        "config_hash": config_hash(config),
        "modules": {name: m.state_dict() for name, m in modules.items()},
        "shapes": {name: _state_shapes(m.state_dict()) for name, m in modules.items()},
        "optimizers": {name: o.state_dict() for name, o in (optimizers or {}).items()},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path}: not a recognized checkpoint (format={payload.get('format')!r})")
    return payload


def restore_module(payload: dict, name: str, module: torch.nn.Module) -> torch.nn.Module:
    module.load_state_dict(payload["modules"][name])
    return module


def checkpoint_hash(path_or_payload) -> str:
    """sha256 over sorted tensor names/values plus step and config hash."""
    payload = path_or_payload
    if not isinstance(payload, dict):
        payload = load_checkpoint(path_or_payload)
    h = hashlib.sha256()
    h.update(str(payload["step"]).encode())
    h.update(payload["config_hash"].encode())
    for mod_name in sorted(payload["modules"]):
        state = payload["modules"][mod_name]
        for key in sorted(state):
            val = state[key]
            h.update(f"{mod_name}.{key}".encode())
            if torch.is_tensor(val):
                h.update(np.ascontiguousarray(val.detach().cpu().numpy()).tobytes())
            else:
                h.update(json.dumps(val, sort_keys=True, default=str).encode())
    return h.hexdigest()
