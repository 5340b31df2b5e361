"""Multi-scale time-series forecasting with a Haar wavelet pyramid and dual-path MLP mixers."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import RawSeries, WindowDataset, load_csv, make_splits, save_csv, synth_sine_trend
from .errors import ConfigError, ContractError, DataError, DimensionError, DivergenceError, DpwError
from .model import ABLATIONS, DpwModel, ModelConfig, forward, init_params, predict
from .normalization import DatasetScaler, InstanceStats, fit_scaler, revin_denormalize, revin_normalize
from .tensor import Tape, Tensor
from .training import TrainConfig, TrainReport, evaluate, grad_check, train
from .wavelet import WaveletPyramid, build_pyramid, dwt_step, idwt_step

__all__ = [
    "ABLATIONS", "Checkpoint", "ConfigError", "ContractError", "DataError", "DatasetScaler",
    "DimensionError", "DivergenceError", "DpwError", "DpwModel", "InstanceStats", "ModelConfig",
    "RawSeries", "Tape", "Tensor", "TrainConfig", "TrainReport", "WaveletPyramid", "WindowDataset",
    "build_pyramid", "dwt_step", "evaluate", "fit_scaler", "forward", "grad_check", "idwt_step",
    "init_params", "load_checkpoint", "load_csv", "make_splits", "predict", "revin_denormalize",
    "revin_normalize", "save_checkpoint", "save_csv", "synth_sine_trend", "train",
]
