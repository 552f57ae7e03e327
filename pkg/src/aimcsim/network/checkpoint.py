"""JSON checkpoints: the hand-off between ``train`` and ``sweep``/``uncertainty``.

Floats are written with Python's shortest round-trip repr, so a reloaded
network is bit-identical to the saved one.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .graph import NetworkSpec
from .presets import build_preset

FORMAT = "aimcsim-checkpoint"
VERSION = 1


def checkpoint_dict(net: NetworkSpec, meta: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "preset_id": net.preset_id,
        "width_scale": net.width_scale,
        "seed": net.seed,
        "attention": net.attention,
        "meta": meta or {},
        "params": {
            name: {key: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                   for key, arr in p.items()}
            for name, p in net.params.items()
        },
    }


def save_checkpoint(net: NetworkSpec, path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(net, meta)))


def from_dict(d: dict) -> NetworkSpec:
    if d.get("format") != FORMAT:
        raise ConfigError("not an aimcsim checkpoint")
    if d.get("version") != VERSION:
        raise ConfigError(f"unsupported checkpoint version {d.get('version')}")
    net = build_preset(d["preset_id"], d["width_scale"], d["seed"], d.get("attention", False))
    params = {}
    for name, p in net.params.items():
        if name not in d["params"]:
            raise ConfigError(f"checkpoint lacks parameters for {name}")
        params[name] = {}
        for key, ref in p.items():
            entry = d["params"][name][key]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != ref.shape:
                raise ConfigError(f"{name}.{key}: shape {arr.shape} != expected {ref.shape}")
            params[name][key] = arr
    return net.with_params(params)


def load_checkpoint(path) -> tuple[NetworkSpec, dict]:
    """Return the network and the checkpoint's ``meta`` record."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_dict(d), d.get("meta", {})
