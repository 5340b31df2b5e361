"""Versioned JSON checkpoint: named parameters, model config and dataset scaler.

Layout::

    {
      "format": "dpwmixer-checkpoint",
      "version": 1,
      "config": {...ModelConfig fields...},
      "scaler": {"mean": [...], "std": [...]},
      "channels": ["HUFL", ...],
      "run": {...resolved run settings, informational...},
      "parameters": [{"name": "scale0.w_lin", "shape": [T, L], "values": [...]}, ...]
    }

Values are written with Python's shortest round-trip float repr, so a save /
load cycle is bit-exact. Readers ignore unknown top-level keys and refuse
versions newer than :data:`VERSION`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import DpwModel, ModelConfig, init_params
from .normalization import DatasetScaler

FORMAT = "dpwmixer-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: DpwModel
    scaler: DatasetScaler
    channels: list[str] = field(default_factory=list)
    run: dict = field(default_factory=dict)


def save_checkpoint(path, model: DpwModel, scaler: DatasetScaler, channels=None, run=None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "scaler": scaler.to_dict(),
        "channels": list(channels or [f"ch{c}" for c in range(model.config.channels)]),
        "run": run or {},
        "parameters": [
            {"name": name, "shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in model.named_parameters()
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid checkpoint ({exc})") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    if int(doc.get("version", 0)) > VERSION:
        raise DataError(f"{path}: checkpoint version {doc['version']} is newer than supported {VERSION}")

    config = ModelConfig.from_dict(doc["config"])
    model = init_params(config, seed=0)
    state = {}
    for entry in doc["parameters"]:
        values = np.asarray(entry["values"], dtype=np.float64)
        state[entry["name"]] = values.reshape(entry["shape"])
    model.load_state_dict(state)
    return Checkpoint(model, DatasetScaler.from_dict(doc["scaler"]), doc.get("channels", []), doc.get("run", {}))
