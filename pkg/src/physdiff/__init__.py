"""Physics-informed diffusion training on a small numpy autodiff engine."""

from .autograd import NumericError, ShapeError, TapeError, Tensor, no_grad
from .config import ConfigError, RunConfig, default_config, load_config
from .data import Dataset, load_dataset, load_tensor, save_dataset, save_tensor
from .denoiser import DenoiserConfig, DenoiserNet, OracleNoiseNet
from .loss import LossConfig, pild_loss, residual_nll, train_step
from .sampler import sample_ancestral, sample_ddim2, sample_ddimK
from .schedule import NoiseSchedule, PhysicsWeightConfig, build_schedule

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Dataset", "DenoiserConfig", "DenoiserNet", "LossConfig", "NoiseSchedule",
    "NumericError", "OracleNoiseNet", "PhysicsWeightConfig", "RunConfig", "ShapeError",
    "TapeError", "Tensor", "build_schedule", "default_config", "load_config", "load_dataset",
    "load_tensor", "no_grad", "pild_loss", "residual_nll", "sample_ancestral", "sample_ddim2",
    "sample_ddimK", "save_dataset", "save_tensor", "train_step",
]
