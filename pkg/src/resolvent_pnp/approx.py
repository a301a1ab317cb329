"""Fit a small residual network to a known resolvent under the Jacobian penalty.

This is an empirical check that penalized networks can approximate the
resolvent of a stationary operator (here separable scalar proxes) on a
compact box while staying firmly nonexpansive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .io import write_csv
from .mmo import Resolvent, ScalarProx, check_firm_nonexpansive
from .net import Network, _penalty_backward, _power_batched, build_dense_network
from .tensor import make_rng, split_rng
from .train import AdamState, adam_step

__all__ = ["ApproxConfig", "ApproxResult", "make_target", "fit_resolvent", "grid_points", "sup_error", "certify_fit"]


@dataclass(frozen=True)
class ApproxConfig:
    dim: int = 1
    width: int = 32
    hidden_layers: int = 2
    box: float = 2.0
    sample_margin: float = 0.5
    lam: float = 0.1
    eps: float = 1e-3
    iterations: int = 3000
    batch_size: int = 128
    lr: float = 1e-2
    lr_drop_at: float = 0.6
    lr_drop_factor: float = 0.1
    power_iters: int = 10
    grid: int = 4001
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.dim <= 4:
            raise ValueError("dim must be between 1 and 4")
        if self.box <= 0 or self.sample_margin < 0:
            raise ValueError("box must be positive and sample_margin >= 0")
        if self.iterations < 0 or self.batch_size < 1 or self.grid < 2:
            raise ValueError("invalid iteration, batch or grid size")
        if self.lam < 0 or not 0 < self.eps < 1:
            raise ValueError("lam must be >= 0 and eps in (0, 1)")


@dataclass
class ApproxResult:
    net: Network
    target: ScalarProx
    iterations: list = field(default_factory=list)
    sup_errors: list = field(default_factory=list)
    sigma2_max: list = field(default_factory=list)

    @property
    def final_error(self):
        return self.sup_errors[-1]

    def to_csv(self, path):
        write_csv(path, ["iteration", "sup_error", "sigma2_max"],
                  zip(self.iterations, self.sup_errors, self.sigma2_max))


def make_target(name, tau=0.5, lo=-1.0, hi=1.0):
    """Scalar prox by name: ``identity``, ``soft-threshold`` or ``interval``."""
    name = name.replace("_", "-")
    if name == "identity":
        return ScalarProx.identity()
    if name == "soft-threshold":
        return ScalarProx.soft_threshold(tau)
    if name == "interval":
        return ScalarProx.interval(lo, hi)
    raise ValueError(f"unknown target {name!r}")


def grid_points(dim, box, n):
    """Tensor grid on ``[-box, box]^dim`` with about ``n`` points in total."""
    per = max(2, int(round(n ** (1.0 / dim)))) if dim > 1 else n
    axis = np.linspace(-box, box, per)
    if dim == 1:
        return axis[:, None]
    return np.array(list(itertools.product(axis, repeat=dim)))


def sup_error(net, target, points):
    return float(np.max(np.abs(net.forward(points) - target(points))))


def fit_resolvent(target, config=ApproxConfig()):
    """Train ``J = Id + chain`` so that ``J`` matches ``target`` coordinatewise.

    Loss per sample: ``||J(x) - T(x)||^2 + lam * max(||dQ(x)||^2, 1 - eps)``
    with ``x`` uniform on the box widened by ``sample_margin``.
    """
    cfg = config
    sizes = [cfg.dim] + [cfg.width] * cfg.hidden_layers + [cfg.dim]
    net = build_dense_network(sizes, residual=True, rng=split_rng(cfg.seed, 0))
    last = net.layers[-1]
    # start from the identity map
    net = Network(net.layers[:-1] + [last.replace(np.zeros_like(last.weight), last.bias)], True)
    theta = net.get_params()
    state = AdamState.zeros(theta.size)
    grid = grid_points(cfg.dim, cfg.box, cfg.grid)
    result = ApproxResult(net, target)
    reach = cfg.box + cfg.sample_margin
    drop = int(round(cfg.lr_drop_at * cfg.iterations))
    floor = 1.0 - cfg.eps
    for it in range(cfg.iterations + 1):
        current = net.with_params(theta)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            result.iterations.append(it)
            result.sup_errors.append(sup_error(current, target, grid))
            result.sigma2_max.append(float("nan"))
        if it == cfg.iterations:
            break
        rng = split_rng(cfg.seed, 1, it)
        X = rng.uniform(-reach, reach, (cfg.batch_size, cfg.dim))
        out, caches = current._forward(X)
        resid = out + X - target(X)
        grad, _ = current._backward(caches, 2.0 * resid)
        if cfg.lam > 0:
            V = rng.standard_normal(X.shape)
            sig, U, _, _ = _power_batched(current, caches, V, cfg.power_iters)
            active = (sig**2 > floor).astype(np.float64)
            if active.any():
                _, gpen = _penalty_backward(current, caches, U, active)
                grad = grad + cfg.lam * gpen
            if result.iterations[-1] == it:
                result.sigma2_max[-1] = float(np.max(sig**2))
        lr = cfg.lr * (cfg.lr_drop_factor if it >= drop else 1.0)
        state, theta = adam_step(state, grad / cfg.batch_size, theta, lr, clip_norm=None)
    result.net = net.with_params(theta)
    return result


def certify_fit(result, box=None, pairs=10_000, rng=0, tol=1e-6):
    """Sampled firm-nonexpansiveness check of the fitted net on ``[-box, box]^K``."""
    net = result.net
    dim = net.layers[0].in_features
    box = 2.0 if box is None else box
    J = Resolvent(net.forward, (dim,), "network", vectorized=True)
    return check_firm_nonexpansive(J, make_rng(rng), pairs, box, tol)
