"""Inverse problems solved by optimizing the seed of a few-step diffusion sampler.

The reconstruction is ``x = R(z)`` where ``R`` is a short deterministic DDIM
chain driven by a noise predictor; ``z`` (plus kernel / tilt variables for blind
problems) is fit to a measurement ``y`` by minimizing ``||y - A(R(z))||^2``.
"""

from . import autodiff
from .autodiff import Tape, Tensor, no_tape
from .baseline import InterleaveConfig, interleave_solve
from .config import ExperimentConfig, load_config
from .errors import (ConfigError, ContractError, DomainError, FormatError, OptimizerError,
                     SolveError, TrainingError)
from .fixtures import make_fixture, smooth_image_prior
from .io import load_checkpoint, load_image, save_checkpoint, save_image
from .metrics import fbe, psnr, ssim
from .noise import NoiseSpec, corrupt
from .operators import (BlindBlur, ConvBlur, Downsample, Identity, Inpaint, NonlinearBlur,
                        TiltThenBlur)
from .optim import Adam, ParamGroup, lbfgs_minimize
from .reverse import ReverseProcess, reverse_fn, sample
from .schedule import make_linear_schedule, make_schedule, pick_substeps
from .score import AnalyticScore, GmmPrior, NeuralScore, TrainConfig, train_score
from .solver import EsConfig, SolveConfig, solve, solve_blind

__version__ = "0.1.0"

__all__ = [
    "autodiff", "Tape", "Tensor", "no_tape",
    "InterleaveConfig", "interleave_solve", "ExperimentConfig", "load_config",
    "ConfigError", "ContractError", "DomainError", "FormatError", "OptimizerError",
    "SolveError", "TrainingError",
    "make_fixture", "smooth_image_prior",
    "load_checkpoint", "load_image", "save_checkpoint", "save_image",
    "fbe", "psnr", "ssim", "NoiseSpec", "corrupt",
    "BlindBlur", "ConvBlur", "Downsample", "Identity", "Inpaint", "NonlinearBlur", "TiltThenBlur",
    "Adam", "ParamGroup", "lbfgs_minimize",
    "ReverseProcess", "reverse_fn", "sample",
    "make_linear_schedule", "make_schedule", "pick_substeps",
    "AnalyticScore", "GmmPrior", "NeuralScore", "TrainConfig", "train_score",
    "EsConfig", "SolveConfig", "solve", "solve_blind",
]
