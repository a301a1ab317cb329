"""Periodic deblurring problems ``z = H x + e`` and parameter heuristics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .io import load_keyvalue, load_ntf, save_keyvalue, save_ntf
from .tensor import CircularConvolution, make_rng

__all__ = [
    "BlurProblem",
    "make_blur_problem",
    "grad_datafit",
    "datafit",
    "effective_noise",
    "recommend_params",
    "save_problem",
    "load_problem",
]


@dataclass(frozen=True)
class BlurProblem:
    kernel: np.ndarray
    observation: np.ndarray
    noise_std: float
    truth: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def H(self):
        return CircularConvolution(self.kernel, self.observation.shape)

    @property
    def mu(self):
        """Lipschitz constant of the data-fit gradient, ``||H||^2``."""
        return self.H.exact_norm() ** 2

    @property
    def kernel_norm(self):
        return float(np.linalg.norm(self.kernel.ravel()))


def make_blur_problem(kernel, truth, noise_std, rng=0, normalize=True):
    """Blur ``truth`` periodically, add white Gaussian noise of std ``noise_std``.

    With ``normalize`` the kernel is rescaled so that ``||H|| = 1``.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    kernel = np.array(kernel, dtype=np.float64)
    truth = np.array(truth, dtype=np.float64)
    if not np.any(kernel):
        raise ValueError("kernel is identically zero")
    if normalize:
        kernel = kernel / CircularConvolution(kernel, truth.shape).exact_norm()
    seed = rng if isinstance(rng, (int, np.integer)) else None
    H = CircularConvolution(kernel, truth.shape)
    z = H.apply(truth) + noise_std * make_rng(rng).standard_normal(truth.shape)
    return BlurProblem(kernel, z, float(noise_std), truth, seed)


def datafit(prob, x):
    r = prob.H.apply(x) - prob.observation
    return 0.5 * float(np.vdot(r, r))


def grad_datafit(prob, x):
    """``H*(Hx - z)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != prob.observation.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {prob.observation.shape}")
    H = prob.H
    return H.adjoint(H.apply(x) - prob.observation)


def effective_noise(prob=None, noise_std=None, kernel_norm=None):
    """``2 nu ||h||``: noise level the denoiser meets near a fixed point."""
    if prob is not None:
        noise_std, kernel_norm = prob.noise_std, prob.kernel_norm
    return 2.0 * noise_std * kernel_norm


def recommend_params(prob=None, mu=None, nu_eff=None):
    """Step ``1.99 / mu`` and training noise ``step * nu_eff``."""
    if prob is not None:
        mu, nu_eff = prob.mu, effective_noise(prob)
    if mu <= 0:
        raise ValueError("mu must be positive")
    gamma = 1.99 / mu
    return gamma, gamma * nu_eff


def save_problem(directory, prob):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_ntf(d / "kernel.ntf", prob.kernel)
    save_ntf(d / "observation.ntf", prob.observation)
    if prob.truth is not None:
        save_ntf(d / "truth.ntf", prob.truth)
    meta = {"nu": repr(prob.noise_std), "mu": repr(prob.mu)}
    if prob.seed is not None:
        meta["seed"] = str(prob.seed)
    save_keyvalue(d / "meta", meta)


def load_problem(directory):
    d = Path(directory)
    meta = load_keyvalue(d / "meta")
    truth = load_ntf(d / "truth.ntf") if (d / "truth.ntf").exists() else None
    seed = int(meta["seed"]) if "seed" in meta else None
    return BlurProblem(load_ntf(d / "kernel.ntf"), load_ntf(d / "observation.ntf"), float(meta["nu"]), truth, seed)
