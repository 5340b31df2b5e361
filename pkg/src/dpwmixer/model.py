"""DPWMixer forward graph.

Internally every scale is laid out as ``(..., C, L_j)``: time on the last
axis, one row per channel, so that all weights are shared across channels.
:func:`forward` accepts and returns the conventional ``(..., time, C)``
layout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .normalization import revin_normalize
from .tensor import Tensor
from .wavelet import avg_pool_pyramid, build_pyramid, scale_lengths

ABLATIONS = {
    "no-wavelet": "use_wavelet",
    "no-global": "use_global_path",
    "no-local": "use_local_path",
    "no-fusion": "use_adaptive_fusion",
}


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 7
    n_scales: int = 3
    patch_len: int = 16
    hidden_dim: int = 128
    mixer_layers: int = 2
    expansion: int = 2
    use_wavelet: bool = True
    use_global_path: bool = True
    use_local_path: bool = True
    use_adaptive_fusion: bool = True
    gate_init: tuple[float, float] = (0.5, 0.5)
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.gate_init = tuple(float(g) for g in self.gate_init)
        self.validate()

    def validate(self) -> None:
        problems = []
        for name in ("lookback", "horizon", "channels", "patch_len", "hidden_dim", "expansion"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        for name in ("n_scales", "mixer_layers"):
            if int(getattr(self, name)) < 0:
                problems.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        if not (self.use_global_path or self.use_local_path):
            problems.append("at least one of use_global_path/use_local_path must be true")
        if len(self.gate_init) != 2:
            problems.append("gate_init needs two values")
        if problems:
            raise ConfigError(problems)

    @property
    def ablations(self) -> list[str]:
        return [flag for flag, attr in ABLATIONS.items() if not getattr(self, attr)]

    def with_ablation(self, flag: str) -> "ModelConfig":
        if flag not in ABLATIONS:
            raise ConfigError(f"unknown ablation {flag!r}; choose from {sorted(ABLATIONS)}")
        d = self.to_dict()
        d[ABLATIONS[flag]] = False
        return ModelConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate_init"] = list(self.gate_init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ScaleBlockParams:
    """Learnable parameters of one scale's dual-path mixer."""

    length: int
    patch_len: int
    n_patches: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]

    def mixer_keys(self, layer: int) -> dict[str, str]:
        return {k: f"mixer.{layer}.{k}" for k in _MIXER_KEYS}


_MIXER_KEYS = (
    "ln1_g", "ln1_b", "tok_w1", "tok_b1", "tok_w2", "tok_b2",
    "ln2_g", "ln2_b", "ch_w1", "ch_b1", "ch_w2", "ch_b2",
)
_GLOBAL_KEYS = ("w_lin", "b_lin", "w_g")


def _is_local_key(key: str) -> bool:
    return key not in _GLOBAL_KEYS


@dataclass
class DpwModel:
    config: ModelConfig
    blocks: list[ScaleBlockParams]
    fusion: Tensor

    def named_parameters(self, trainable_only: bool = False):
        """Yield ``(name, tensor)`` in a fixed order.

        With ``trainable_only`` the parameters of disabled paths, their gates
        and (without adaptive fusion) the fusion matrix are skipped.
        """
        cfg = self.config
        for j, block in enumerate(self.blocks):
            for key, t in block.params.items():
                if trainable_only:
                    if _is_local_key(key) and not cfg.use_local_path:
                        continue
                    if not _is_local_key(key) and not cfg.use_global_path:
                        continue
                yield f"scale{j}.{key}", t
        if not trainable_only or cfg.use_adaptive_fusion:
            yield "fusion", self.fusion

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        return [t for _, t in self.named_parameters(trainable_only)]

    def n_parameters(self, trainable_only: bool = True) -> int:
        return sum(t.size for t in self.parameters(trainable_only))

    def zero_grad(self) -> None:
        for t in self.parameters(trainable_only=False):
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in state:
                raise DimensionError(f"state is missing parameter {name}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(f"parameter {name}: expected {t.shape}, got {value.shape}")
            t.data = value.copy()

    def fusion_weights(self) -> np.ndarray:
        """Current ``(N+1, C)`` scale weights per channel."""
        n = len(self.blocks)
        if not self.config.use_adaptive_fusion:
            return np.full((n, self.config.channels), 1.0 / n)
        return tn.softmax(self.fusion.data, axis=0).data

    def forward(self, x) -> Tensor:
        return forward(x, self)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        return predict(self, x, batch_size)


# ---------------------------------------------------------------------------
# construction


def block_geometry(length: int, patch_len: int) -> tuple[int, int]:
    """Effective patch length and patch count for a scale of ``length`` samples."""
    p = min(patch_len, length)
    return p, math.ceil(length / p)


def init_params(config: ModelConfig, seed: int = 0) -> DpwModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; LN gains 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    T, D, E = config.horizon, config.hidden_dim, config.expansion

    def w(fan_in, *shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    blocks = []
    for length in scale_lengths(config.lookback, config.n_scales):
        p, n_p = block_geometry(length, config.patch_len)
        raw = {
            "w_lin": w(length, T, length),
            "b_lin": np.zeros(T),
            "w_embed": w(p, p, D),
            "b_embed": np.zeros(D),
        }
        for i in range(config.mixer_layers):
            pre = f"mixer.{i}."
            raw.update({
                pre + "ln1_g": np.ones(D),
                pre + "ln1_b": np.zeros(D),
                pre + "tok_w1": w(n_p, n_p, E * n_p),
                pre + "tok_b1": np.zeros(E * n_p),
                pre + "tok_w2": w(E * n_p, E * n_p, n_p),
                pre + "tok_b2": np.zeros(n_p),
                pre + "ln2_g": np.ones(D),
                pre + "ln2_b": np.zeros(D),
                pre + "ch_w1": w(D, D, E * D),
                pre + "ch_b1": np.zeros(E * D),
                pre + "ch_w2": w(E * D, E * D, D),
                pre + "ch_b2": np.zeros(D),
            })
        raw["w_head"] = w(n_p * D, n_p * D, T)
        raw["b_head"] = np.zeros(T)
        raw["w_g"] = np.array([config.gate_init[0]])
        raw["w_l"] = np.array([config.gate_init[1]])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}
        blocks.append(ScaleBlockParams(length, p, n_p, params))
    fusion = Tensor(np.zeros((config.n_scales + 1, config.channels)), requires_grad=True, name="fusion")
    return DpwModel(config, blocks, fusion)


# ---------------------------------------------------------------------------
# per-scale paths


def _check_length(x: Tensor, block: ScaleBlockParams) -> None:
    if x.shape[-1] != block.length:
        raise DimensionError(f"scale input has length {x.shape[-1]}, block expects {block.length}")


def global_path(x_scale: Tensor, block: ScaleBlockParams) -> Tensor:
    """Channel-shared linear map ``(..., C, L_j) -> (..., C, T)``."""
    x_scale = tn._as_tensor(x_scale)
    _check_length(x_scale, block)
    return tn.linear(x_scale, block["w_lin"], block["b_lin"], transpose_w=True)


def patchify(x_scale: Tensor, patch_len: int) -> Tensor:
    """``(..., C, L_j) -> (..., C, N_p, P_j)`` with tail replication padding."""
    x_scale = tn._as_tensor(x_scale)
    length = x_scale.shape[-1]
    p, n_p = block_geometry(length, patch_len)
    padded = tn.pad_replicate_tail(x_scale, n_p * p, axis=-1)
    return tn.reshape(padded, x_scale.shape[:-1] + (n_p, p))


def _mlp(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return tn.linear(tn.gelu(tn.linear(x, w1, b1)), w2, b2)


def mixer_layer(z: Tensor, block: ScaleBlockParams, layer: int, eps: float = 1e-5) -> Tensor:
    """Token-mixing then channel-mixing residual block on ``(..., N_p, D)``."""
    k = block.mixer_keys(layer)
    prm = block.params
    nd = z.ndim
    swap = tuple(range(nd - 2)) + (nd - 1, nd - 2)

    normed = tn.layer_norm(z, prm[k["ln1_g"]], prm[k["ln1_b"]], eps)
    mixed = _mlp(tn.transpose(normed, swap), prm[k["tok_w1"]], prm[k["tok_b1"]],
                 prm[k["tok_w2"]], prm[k["tok_b2"]])
    u = tn.add(z, tn.transpose(mixed, swap))

    normed = tn.layer_norm(u, prm[k["ln2_g"]], prm[k["ln2_b"]], eps)
    mixed = _mlp(normed, prm[k["ch_w1"]], prm[k["ch_b1"]], prm[k["ch_w2"]], prm[k["ch_b2"]])
    return tn.add(u, mixed)


def local_path(x_scale: Tensor, block: ScaleBlockParams, n_layers: int, eps: float = 1e-5) -> Tensor:
    """Patch embedding, mixer stack and linear head: ``(..., C, L_j) -> (..., C, T)``."""
    x_scale = tn._as_tensor(x_scale)
    _check_length(x_scale, block)
    z = tn.linear(patchify(x_scale, block.patch_len), block["w_embed"], block["b_embed"])
    for i in range(n_layers):
        z = mixer_layer(z, block, i, eps)
    flat = tn.reshape(z, z.shape[:-2] + (z.shape[-2] * z.shape[-1],))
    return tn.linear(flat, block["w_head"], block["b_head"])


def scale_forecast(x_scale: Tensor, block: ScaleBlockParams, config: ModelConfig) -> Tensor:
    """Gated sum of the enabled paths for one scale."""
    if not (config.use_global_path or config.use_local_path):
        raise ConfigError("both forecasting paths are disabled")
    out = None
    if config.use_global_path:
        out = tn.mul(global_path(x_scale, block), block["w_g"])
    if config.use_local_path:
        loc = tn.mul(local_path(x_scale, block, config.mixer_layers, config.ln_eps), block["w_l"])
        out = loc if out is None else tn.add(out, loc)
    return out


def fuse(scale_forecasts, fusion: Tensor | None) -> Tensor:
    """Per-channel convex combination of ``(..., C, T)`` scale forecasts.

    ``fusion`` is the ``(N+1, C)`` logit matrix; ``None`` means uniform
    weights.
    """
    n = len(scale_forecasts)
    shape = scale_forecasts[0].shape
    for f in scale_forecasts:
        if f.shape != shape:
            raise DimensionError(f"fuse: scale forecasts have shapes {shape} and {f.shape}")
    if fusion is None:
        out = scale_forecasts[0]
        for f in scale_forecasts[1:]:
            out = tn.add(out, f)
        return tn.mul_scalar(out, 1.0 / n)
    if fusion.shape != (n, shape[-2]):
        raise DimensionError(f"fuse: fusion matrix {fusion.shape} does not match ({n}, {shape[-2]})")
    weights = tn.softmax(fusion, axis=0)
    out = None
    for j, f in enumerate(scale_forecasts):
        w_j = tn.reshape(tn.slice_(weights, 0, j, j + 1), (shape[-2], 1))
        term = tn.mul(f, w_j)
        out = term if out is None else tn.add(out, term)
    return out


# ---------------------------------------------------------------------------
# full model


def build_scales(x_norm: np.ndarray, config: ModelConfig) -> list[np.ndarray]:
    """Scale inputs for a ``(..., C, L)`` normalized batch."""
    if config.use_wavelet:
        return build_pyramid(x_norm, config.n_scales, axis=-1).scales_input
    return avg_pool_pyramid(x_norm, config.n_scales, axis=-1)


def forward(x_raw, model: DpwModel) -> Tensor:
    """Forecast ``(L, C)`` or ``(B, L, C)`` input into ``(T, C)`` / ``(B, T, C)``.

    Instance normalization, the pyramid and the final de-normalization use
    only input statistics and sit outside the learnable graph; the returned
    tensor carries the tape connection to every parameter.
    """
    cfg = model.config
    x = np.asarray(x_raw, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.lookback, cfg.channels):
        raise DimensionError(
            f"forward expects (L={cfg.lookback}, C={cfg.channels}) windows, got {np.shape(x_raw)}"
        )
    x_norm, stats = revin_normalize(x, axis=1)
    scales = build_scales(np.swapaxes(x_norm, 1, 2), cfg)
    preds = [scale_forecast(Tensor(s), block, cfg) for s, block in zip(scales, model.blocks)]
    fused = fuse(preds, model.fusion if cfg.use_adaptive_fusion else None)
    y = tn.transpose(fused, (0, 2, 1))
    y = tn.add(tn.mul(y, Tensor(stats.sigma)), Tensor(stats.mu))
    if single:
        y = tn.reshape(y, y.shape[1:])
    return y


def predict(model: DpwModel, x, batch_size: int = 256) -> np.ndarray:
    """Tape-free batched forecast returning a numpy array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return forward(x, model).data
    outs = [forward(x[i:i + batch_size], model).data for i in range(0, len(x), batch_size)]
    if not outs:
        return np.empty((0, model.config.horizon, model.config.channels))
    return np.concatenate(outs, axis=0)
