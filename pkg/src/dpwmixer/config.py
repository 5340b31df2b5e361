"""Run configuration: defaults < flat ``key = value`` file < command-line flags."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataError
from .model import ABLATIONS, ModelConfig
from .training import TrainConfig


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ablations(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        items = [str(v) for v in text]
    else:
        items = [v.strip() for v in str(text).split(",")]
    return tuple(v for v in items if v and v != "none")


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


# key -> (parser, default)
FIELDS = {
    "data": (str, ""),
    "lookback": (int, 96),
    "horizon": (int, 96),
    "scales": (int, 3),
    "patch_len": (int, 16),
    "hidden_dim": (int, 128),
    "mixer_layers": (int, 2),
    "lr": (float, 1e-3),
    "batch_size": (int, 32),
    "epochs": (int, 10),
    "patience": (int, 5),
    "seed": (int, 0),
    "ablate": (_ablations, ()),
    "split": (_floats, (0.7, 0.1, 0.2)),
    "stride": (int, 1),
    "max_batches": (_opt_int, None),
    "gate_init": (_floats, (0.5, 0.5)),
    "out": (str, "runs/latest"),
    # used when data = synthetic
    "synth_length": (int, 5000),
    "synth_channels": (int, 3),
    "synth_periods": (_floats, (24.0, 60.0)),
    "synth_slope": (float, 1e-3),
    "synth_noise": (float, 0.1),
    "synth_seed": (int, 0),
}


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def is_synthetic(self) -> bool:
        return self.values["data"] == "synthetic"

    def model_config(self, channels: int) -> ModelConfig:
        v = self.values
        flags = {attr: flag not in v["ablate"] for flag, attr in ABLATIONS.items()}
        return ModelConfig(
            lookback=v["lookback"], horizon=v["horizon"], channels=channels, n_scales=v["scales"],
            patch_len=v["patch_len"], hidden_dim=v["hidden_dim"], mixer_layers=v["mixer_layers"],
            gate_init=v["gate_init"], **flags,
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            learning_rate=v["lr"], batch_size=v["batch_size"], max_epochs=v["epochs"],
            patience=v["patience"], seed=v["seed"], max_batches=v["max_batches"],
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        raw[normalize_key(key)] = value.strip()
    return raw


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, file values and overrides; report every bad field at once."""
    merged = {}
    problems = []
    layers = [file_values or {}, overrides or {}]
    for key, (parse, default) in FIELDS.items():
        value = default
        for layer in layers:
            if key in layer and layer[key] is not None:
                try:
                    value = parse(layer[key])
                except (TypeError, ValueError):
                    problems.append(f"{key}: cannot parse {layer[key]!r}")
        merged[key] = value
    for layer in layers:
        for key in layer:
            if key not in FIELDS:
                problems.append(f"{key}: unknown setting")
    for flag in merged.get("ablate", ()):
        if flag not in ABLATIONS:
            problems.append(f"ablate: unknown ablation {flag!r} (choose from {', '.join(sorted(ABLATIONS))})")
    if problems:
        raise ConfigError(problems)

    cfg = RunConfig(merged)
    # surface model/training validation problems together
    for build in (lambda: cfg.model_config(channels=max(1, merged["synth_channels"])), cfg.train_config):
        try:
            build()
        except ConfigError as exc:
            problems.extend(exc.problems)
    if len(merged["split"]) != 3 or abs(sum(merged["split"]) - 1.0) > 1e-9:
        problems.append(f"split: need three ratios summing to 1, got {list(merged['split'])}")
    if merged["stride"] < 1:
        problems.append("stride: must be >= 1")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_series(cfg: RunConfig):
    """The raw series named by ``cfg['data']`` (a CSV path or ``synthetic``)."""
    from .data import load_csv, synth_sine_trend

    if cfg.is_synthetic:
        v = cfg.values
        return synth_sine_trend(
            v["synth_length"], v["synth_channels"], periods=v["synth_periods"],
            trend_slope=v["synth_slope"], noise_sigma=v["synth_noise"], seed=v["synth_seed"],
        )
    if not cfg["data"]:
        raise ConfigError("data: no dataset given (use --data PATH or --data synthetic)")
    return load_csv(cfg["data"])


def input_hash(cfg: RunConfig) -> str:
    """sha256 over the dataset bytes (or the synthetic generator settings)."""
    h = hashlib.sha256()
    if cfg.is_synthetic:
        synth = {k: v for k, v in cfg.to_dict().items() if k.startswith("synth_")}
        h.update(json.dumps(synth, sort_keys=True).encode())
    else:
        path = Path(cfg["data"])
        if not path.is_file():
            raise DataError(f"data file not found: {path}")
        h.update(path.read_bytes())
    return h.hexdigest()
