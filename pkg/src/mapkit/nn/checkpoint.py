"""Versioned JSON checkpoints: parameter name -> shape + flat values.

JSON float serialization uses repr, so the round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

Params = dict[str, Tensor]

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: Params, path: str | Path, config: dict | None = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "params": {
            name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_params(path: str | Path, expect_config: dict | None = None) -> tuple[Params, dict]:
    """Load a checkpoint; optionally verify its config header field-by-field."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('format_version')!r} "
            f"!= supported {FORMAT_VERSION}")
    config = payload.get("config", {})
    if expect_config is not None:
        for key, want in expect_config.items():
            got = config.get(key)
            if got != want:
                raise CheckpointError(
                    f"checkpoint config mismatch on '{key}': "
                    f"checkpoint has {got!r}, expected {want!r}")
    params: Params = {}
    for name, entry in payload["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params[name] = Tensor(arr, requires_grad=True)
    return params, config


def load_params_into(params: Params, path: str | Path,
                     expect_config: dict | None = None) -> dict:
    """Overwrite existing parameter values in place; shapes must match."""
    loaded, config = load_params(path, expect_config)
    for name, p in loaded.items():
        if name not in params:
            raise CheckpointError(f"unexpected parameter '{name}' in checkpoint")
        if params[name].shape != p.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': model {params[name].shape}, "
                f"checkpoint {p.shape}")
        params[name].data[...] = p.data
    missing = set(params) - set(loaded)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return config


def params_hash(params: Params, names: set[str] | None = None) -> dict[str, str]:
    """Stable content hash per parameter, for freeze-contract assertions."""
    import hashlib
    out = {}
    for name, p in params.items():
        if names is not None and name not in names:
            continue
        out[name] = hashlib.sha256(np.ascontiguousarray(p.data).tobytes()).hexdigest()
    return out
