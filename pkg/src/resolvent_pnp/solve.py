"""Forward-backward iterations ``x <- J(x - gamma grad f(x))`` and classical proxes."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .io import save_ntf, write_csv
from .tensor import Haar, is_orthogonal

__all__ = [
    "SolveConfig",
    "SolveReport",
    "fb_solve",
    "unfold",
    "fixed_point_residual",
    "residual_series",
    "soft_threshold",
    "prox_l1_synthesis",
    "prox_tv",
    "tv_norm",
    "baseline_resolvent",
]


@dataclass(frozen=True)
class SolveConfig:
    gamma: float
    max_iter: int = 1000
    tol: Optional[float] = None
    record_every: int = 1
    mu: Optional[float] = None
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class SolveReport:
    x: np.ndarray
    residuals: np.ndarray
    fidelity: list = field(default_factory=list)  # (iteration, value)
    iterations: int = 0
    wall_time: float = 0.0
    wall_ms: list = field(default_factory=list)
    status: str = "max_iter"
    normalized: bool = True

    def to_csv(self, path):
        fid = dict(self.fidelity)
        rows = [
            (n, float(c), float(fid.get(n, float("nan"))), float(ms))
            for n, c, ms in zip(range(1, self.iterations + 1), self.residuals, self.wall_ms)
        ]
        write_csv(path, ["iteration", "c_n", "fidelity", "wall_ms"], rows)

    def save(self, csv_path, ntf_path):
        self.to_csv(csv_path)
        save_ntf(ntf_path, self.x)


def _step(J, gradf, gamma, x):
    return J(x - gamma * gradf(x))


def _check_gamma(gamma, mu):
    if mu is None:
        warnings.warn("Lipschitz constant of grad f unknown; step size not checked", RuntimeWarning, stacklevel=3)
    elif gamma >= 2.0 / mu:
        raise ValueError(f"step {gamma} violates gamma < 2/mu = {2.0 / mu}")


def fb_solve(gradf, J, config, x0, fidelity=None):
    """Run forward-backward from ``x0``.

    Records ``c_n = ||x_n - x_{n-1}|| / ||x_0||`` (unnormalized, with
    ``normalized=False``, when ``x_0 = 0``).  Stops early when ``c_n`` drops
    below ``config.tol``; aborts with ``status="diverged"`` when the iterate
    norm exceeds ``divergence_factor * ||x_0||`` and ``status="nonfinite"``
    on NaN/Inf.
    """
    _check_gamma(config.gamma, config.mu)
    x = np.array(x0, dtype=np.float64)
    n0 = float(np.linalg.norm(x))
    normalized = n0 > 0
    scale = n0 if normalized else 1.0
    bound = config.divergence_factor * scale
    res, fid, ms = [], [], []
    status = "max_iter"
    t0 = time.perf_counter()
    for n in range(1, config.max_iter + 1):
        xn = _step(J, gradf, config.gamma, x)
        if not np.all(np.isfinite(xn)):
            status = "nonfinite"
            break
        res.append(float(np.linalg.norm(xn - x)) / scale)
        ms.append(1e3 * (time.perf_counter() - t0))
        x = xn
        if fidelity is not None and n % config.record_every == 0:
            fid.append((n, float(fidelity(x))))
        if np.linalg.norm(x) > bound:
            status = "diverged"
            break
        if config.tol is not None and res[-1] < config.tol:
            status = "converged"
            break
    return SolveReport(
        x, np.array(res), fid, len(res), time.perf_counter() - t0, ms, status, normalized
    )


def unfold(J, gradf, gamma, depth, x0):
    """Exactly ``depth`` forward-backward steps, no checks or recording."""
    x = np.array(x0, dtype=np.float64)
    for _ in range(depth):
        x = _step(J, gradf, gamma, x)
    return x


def fixed_point_residual(J, gradf, gamma, x):
    return float(np.linalg.norm(x - _step(J, gradf, gamma, x)))


def residual_series(report):
    """``c_n`` series; unnormalized when ``report.normalized`` is False."""
    return report.residuals


# ---------------------------------------------------------------------------
# classical proxes
# ---------------------------------------------------------------------------


def soft_threshold(x, tau):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def prox_l1_synthesis(x, tau, Psi):
    """Prox of ``tau ||Psi* . ||_1`` for an orthogonal ``Psi``: ``Psi soft(Psi* x)``."""
    if not is_orthogonal(Psi):
        raise ValueError("Psi must be orthogonal")
    if tau == 0:
        return np.array(x, dtype=np.float64)
    return Psi.apply(soft_threshold(Psi.adjoint(x), tau))


def _grad(u):
    return np.stack([np.roll(u, -1, axis=-2) - u, np.roll(u, -1, axis=-1) - u])


def _grad_T(p):
    return (np.roll(p[0], 1, axis=-2) - p[0]) + (np.roll(p[1], 1, axis=-1) - p[1])


def tv_norm(u):
    """Isotropic total variation with periodic boundaries."""
    g = _grad(np.asarray(u, dtype=np.float64))
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def prox_tv(x, tau, inner_iters=50, return_gap=False):
    """Approximate prox of ``tau * TV`` by dual projected gradient (step 1/8).

    Acts on the last two axes.  With ``return_gap`` also returns the final
    primal-dual gap.
    """
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if tau == 0:
        return (x.copy(), 0.0) if return_gap else x.copy()
    p = np.zeros((2,) + x.shape)
    step = 1.0 / (8.0 * tau)
    for _ in range(inner_iters):
        u = x - tau * _grad_T(p)
        p = p + step * _grad(u)
        p /= np.maximum(1.0, np.sqrt(p[0] ** 2 + p[1] ** 2))
    u = x - tau * _grad_T(p)
    if not return_gap:
        return u
    primal = 0.5 * float(np.sum((u - x) ** 2)) + tau * tv_norm(u)
    dual = 0.5 * float(np.sum(x**2)) - 0.5 * float(np.sum(u**2))
    return u, primal - dual


def baseline_resolvent(kind, shape, step, weight, inner_iters=50, levels=3):
    """Classical resolvent ``prox_{step*weight*g}`` on images of ``shape``.

    ``kind`` is ``"l1"`` (soft-thresholding in an orthonormal Haar basis) or
    ``"tv"`` (isotropic total variation, approximate).
    """
    tau = step * weight
    if tau < 0:
        raise ValueError("step * weight must be >= 0")
    if kind == "l1":
        W = Haar(shape, levels)
        if tau == 0:
            return lambda x: np.array(x, dtype=np.float64)
        return lambda x: W.adjoint(soft_threshold(W.apply(x), tau))
    if kind == "tv":
        return lambda x: prox_tv(x, tau, inner_iters)
    raise ValueError(f"unknown baseline {kind!r}")
