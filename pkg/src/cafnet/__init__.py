"""Checkerboard-artifact-free image enhancement network with fixed smoothing layers."""
__version__ = "0.1.0"

from .errors import (CafnetError, CheckpointError, ConfigurationError, DimensionError,
                     InvalidInputError, NumericError, UsageError)
from .tensor import Parameter, Tensor, default_dtype, no_grad
from .fixed import FixedConvLayer, FixedKernel, build_fixed_kernel, build_zoh_kernel, fixed_conv
from .network import Network, NetworkConfig, build_network, count_parameters, parameters
from .train import TrainConfig, train
from .checkpoint import load_checkpoint, save_checkpoint
from .analysis import (SpectrumReport, MetricReport, checkerboard_score, gray_probe,
                       log_amplitude_spectrum, psnr, ssim)

__all__ = [
    "CafnetError", "CheckpointError", "ConfigurationError", "DimensionError",
    "InvalidInputError", "NumericError", "UsageError",
    "Parameter", "Tensor", "default_dtype", "no_grad",
    "FixedConvLayer", "FixedKernel", "build_fixed_kernel", "build_zoh_kernel", "fixed_conv",
    "Network", "NetworkConfig", "build_network", "count_parameters", "parameters",
    "TrainConfig", "train", "load_checkpoint", "save_checkpoint",
    "SpectrumReport", "MetricReport", "checkerboard_score", "gray_probe",
    "log_amplitude_spectrum", "psnr", "ssim",
]
