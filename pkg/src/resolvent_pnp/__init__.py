"""Learned firmly nonexpansive denoisers for plug-and-play forward-backward.

Resolvents of maximally monotone operators, a small numpy CNN trained with a
Jacobian spectral-norm penalty, periodic deblurring problems and the
forward-backward solver that uses them.
"""

from .estimators import PnPFBRestorer, ResolventDenoiser
from .inverse import BlurProblem, effective_noise, make_blur_problem, recommend_params
from .metrics import psnr, ssim
from .mmo import Resolvent, check_firm_nonexpansive
from .net import Network, build_conv_network, build_dense_network, jacobian_spectral_norm
from .solve import SolveConfig, fb_solve
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BlurProblem",
    "Network",
    "PnPFBRestorer",
    "Resolvent",
    "ResolventDenoiser",
    "SolveConfig",
    "TrainConfig",
    "build_conv_network",
    "build_dense_network",
    "check_firm_nonexpansive",
    "effective_noise",
    "fb_solve",
    "jacobian_spectral_norm",
    "make_blur_problem",
    "psnr",
    "recommend_params",
    "ssim",
    "train",
]
