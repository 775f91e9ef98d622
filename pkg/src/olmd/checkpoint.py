"""Self-describing checkpoints: a JSON manifest plus one OLMT file per parameter."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .io import read_tensor, write_tensor
from .model import OLMD, ModelConfig

CHECKPOINT_NAME = "checkpoint.json"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: OLMD, out_dir, meta: dict | None = None) -> Path:
    out = Path(out_dir)
    (out / "params").mkdir(parents=True, exist_ok=True)
    params = {}
    for name, p in model.named_parameters():
        rel = f"params/{name}.olmt"
        write_tensor(out / rel, p.data)
        params[name] = rel
    manifest = {
        "format_version": 1,
        "model_config": model.cfg.to_dict(),
        "params": params,
        "meta": meta or {},
    }
    path = out / CHECKPOINT_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(ckpt_dir, dtype=np.float32) -> tuple[OLMD, dict]:
    """Rebuild the model from the stored config and load every parameter."""
    ckpt_dir = Path(ckpt_dir)
    try:
        with open(ckpt_dir / CHECKPOINT_NAME, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint in {ckpt_dir}: {exc}") from exc
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = OLMD(cfg, seed=0, dtype=dtype)
    named = dict(model.named_parameters())
    stored = manifest["params"]
    if set(named) != set(stored):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise CheckpointError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in named.items():
        arr = read_tensor(ckpt_dir / stored[name]).data
        if arr.shape != p.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
        p.data = arr.astype(dtype, copy=False)
    return model, manifest.get("meta", {})
