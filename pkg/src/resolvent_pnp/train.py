"""Supervised training of firmly nonexpansive denoisers.

Each batch item draws a clean image ``x``, noise ``w`` and a mixing weight
``rho``; the loss is

    ||J(y) - x||^2 + lam * max(||dQ(x_mix)||^2, 1 - eps)

with ``y = x + sigma w`` and ``x_mix = rho x + (1 - rho) J(y)``.  The
spectral norm comes from a few power iterations; its gradient is taken with
the singular vector frozen and ``x_mix`` held fixed.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .io import write_csv
from .metrics import psnr
from .net import _penalty_backward, _power_batched, build_conv_network
from .tensor import make_rng, split_rng

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainLog",
    "TrainingError",
    "make_noisy",
    "interpolate_sample",
    "loss_and_grad",
    "adam_step",
    "train",
]

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    """Non-finite loss or gradient; carries the diagnostics of the failing step."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass
class TrainConfig:
    lam: float = 0.0
    eps: float = 0.05
    sigma: float = 0.01
    sigma_uniform: bool = False
    batch_size: int = 8
    iterations: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1e-2
    power_iters: int = 5
    seed: int = 0
    lr_drop_at: float = 0.8
    lr_drop_factor: float = 0.1
    loss: str = "l2"
    patch_size: int = 0
    flips: bool = True
    pretrain_iterations: int = 0
    pretrain_sigma_max: float = 0.1
    epoch_length: int = 50
    checkpoint_every: int = 0
    # architecture
    depth: int = 6
    width: int = 16
    kernel_size: int = 3
    slope: float = 0.2
    channels: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.sigma < 0 or self.pretrain_sigma_max < 0:
            raise ValueError("noise levels must be >= 0")
        for name in ("batch_size", "power_iters", "depth", "width", "kernel_size", "channels", "epoch_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("iterations", "pretrain_iterations", "patch_size", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.adam_eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        if self.loss not in ("l2", "l1"):
            raise ValueError("loss must be 'l2' or 'l1'")
        return self

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values (``key=value`` config files)."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            default = fields[key].default
            if isinstance(default, bool):
                val = str(raw).strip().lower()
                if val not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(f"{key}: expected a boolean, got {raw!r}")
                kwargs[key] = val in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)

    def to_mapping(self):
        return {k: v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# pieces of the loss
# ---------------------------------------------------------------------------


def make_noisy(x, sigma, rng):
    """``x + sigma * w`` with standard normal ``w``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    w = make_rng(rng).standard_normal(x.shape)
    return x + sigma * w


def interpolate_sample(x, jy, rho):
    """``rho * x + (1 - rho) * jy``; ``rho`` may be an array broadcast over leading axes."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0) or np.any(rho > 1):
        raise ValueError("rho must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    if rho.ndim:
        rho = rho.reshape(rho.shape + (1,) * (x.ndim - rho.ndim))
    return rho * x + (1.0 - rho) * np.asarray(jy, dtype=np.float64)


def _draws(rng, shape, D, cfg):
    """Per-item draws from child streams, independent of batch evaluation order."""
    children = rng.spawn(D)
    sig, W, rho, V = [], [], [], []
    for c in children:
        sig.append(c.uniform(0.0, cfg.sigma) if cfg.sigma_uniform else cfg.sigma)
        W.append(c.standard_normal(shape))
        rho.append(c.uniform(0.0, 1.0))
        V.append(c.standard_normal(shape))
    return np.array(sig), np.stack(W), np.array(rho), np.stack(V)


def loss_and_grad(net, batch, config, rng):
    """Batch-mean loss, its parameter gradient, and per-item diagnostics."""
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == net._sample_ndim:
        X = X[None]
    D = X.shape[0]
    if D == 0:
        raise ValueError("batch must be nonempty")
    rng = make_rng(rng)
    sig, W, rho, V = _draws(rng, X.shape[1:], D, config)
    sig_b = sig.reshape((D,) + (1,) * (X.ndim - 1))
    Y = X + sig_b * W

    out, caches = net._forward(Y)
    JY = out + Y if net.residual else out
    resid = JY - X
    flat = resid.reshape(D, -1)
    if config.loss == "l2":
        data = np.sum(flat**2, axis=1)
        cot = 2.0 * resid
    else:
        data = np.sum(np.abs(flat), axis=1)
        cot = np.sign(resid)
    grad, _ = net._backward(caches, cot)

    lam = config.lam
    floor = 1.0 - config.eps
    sigma2 = np.full(D, np.nan)
    penalty = np.zeros(D)
    if lam > 0:
        Xt = interpolate_sample(X, JY, rho)
        _, caches_t = net._forward(Xt)
        sig_hat, U, _, _ = _power_batched(net, caches_t, V, config.power_iters)
        s = sig_hat**2
        # only items above the hinge backpropagate
        active = (s > floor).astype(np.float64)
        if active.any():
            s, gpen = _penalty_backward(net, caches_t, U, active)
            grad = grad + lam * gpen
        sigma2 = s
        penalty = lam * np.maximum(s, floor)

    phi = data + penalty
    diagnostics = {
        "data_fit": data,
        "penalty": penalty,
        "sigma2": sigma2,
        "noise": sig,
        "rho": rho,
    }
    return float(np.mean(phi)), grad / D, diagnostics


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state, grad, theta, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
    """One bias-corrected Adam update after global-norm clipping.  Returns ``(state, theta)``."""
    grad = np.asarray(grad, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("gradient, parameters and moments must share a shape")
    if clip_norm:
        gn = np.linalg.norm(grad)
        if gn > clip_norm:
            grad = grad * (clip_norm / gn)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    return AdamState(m, v, t), theta - lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    phase: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    data_fit: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    sigma2_max: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    val_psnr: list = field(default_factory=list)  # (iteration, mean psnr)

    def __len__(self):
        return len(self.loss)

    def numeric(self):
        """Deterministic content (everything except wall-clock times)."""
        return (
            tuple(self.phase),
            np.array(self.loss),
            np.array(self.data_fit),
            np.array(self.penalty),
            np.array(self.sigma2_max),
            tuple(self.val_psnr),
        )

    def to_csv(self, path):
        rows = zip(
            range(1, len(self) + 1), self.phase, self.loss, self.data_fit,
            self.penalty, self.sigma2_max, self.lr, self.wall_time,
        )
        write_csv(path, ["iteration", "phase", "loss", "data_fit", "penalty", "sigma2_max", "lr", "wall_time"], rows)


def _crop_batch(images, idx, rng, patch, flips):
    out = []
    for i in idx:
        img = images[i]
        if patch and patch < img.shape[-1]:
            a, b = rng.integers(0, img.shape[-2] - patch + 1), rng.integers(0, img.shape[-1] - patch + 1)
            img = img[..., a : a + patch, b : b + patch]
        if flips:
            if rng.random() < 0.5:
                img = img[..., ::-1]
            if rng.random() < 0.5:
                img = img[..., ::-1, :]
        out.append(img)
    return np.ascontiguousarray(np.stack(out))


def _validation_psnr(net, val, sigma, seed):
    rng = split_rng(seed, 99)
    Y = val + sigma * rng.standard_normal(val.shape)
    D = net.forward(Y)
    return float(np.mean([psnr(d, x) for d, x in zip(D, val)]))


def train(dataset, config, init_net=None, validation=None, on_checkpoint=None):
    """Run the optional pretraining phase then the main phase.

    Pretraining uses ``lam = 0`` and per-item noise uniform in
    ``[0, pretrain_sigma_max]``.  Returns ``(net, TrainLog)``; reproducible
    bit for bit from ``config.seed``.
    """
    images = np.asarray(dataset, dtype=np.float64)
    if images.ndim == 3:
        images = images[:, None]
    if len(images) == 0:
        raise ValueError("dataset must be nonempty")
    net = init_net
    if net is None:
        net = build_conv_network(
            config.depth, config.width, config.channels, config.kernel_size, config.slope,
            residual=True, rng=split_rng(config.seed, 0),
        )
    theta = net.get_params()
    state = AdamState.zeros(theta.size)
    tlog = TrainLog()
    phases = []
    if config.pretrain_iterations:
        phases.append(("pretrain", config.replace(lam=0.0, sigma_uniform=True, sigma=config.pretrain_sigma_max,
                                                   iterations=config.pretrain_iterations)))
    phases.append(("train", config))
    t0 = time.perf_counter()
    step = 0
    for pnum, (pname, cfg) in enumerate(phases, start=1):
        drop = int(round(cfg.lr_drop_at * cfg.iterations))
        for it in range(cfg.iterations):
            rng = split_rng(cfg.seed, pnum, it)
            idx = rng.integers(0, len(images), cfg.batch_size)
            batch = _crop_batch(images, idx, rng, cfg.patch_size, cfg.flips)
            current = net.with_params(theta)
            value, grad, diag = loss_and_grad(current, batch, cfg, rng)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingError(f"non-finite loss at {pname} iteration {it + 1}", diag)
            lr = cfg.lr * (cfg.lr_drop_factor if it >= drop else 1.0)
            state, theta = adam_step(state, grad, theta, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.clip_norm)
            step += 1
            tlog.phase.append(pname)
            tlog.loss.append(value)
            tlog.data_fit.append(float(np.mean(diag["data_fit"])))
            tlog.penalty.append(float(np.mean(diag["penalty"])))
            tlog.sigma2_max.append(float(np.max(diag["sigma2"])) if cfg.lam > 0 else float("nan"))
            tlog.lr.append(lr)
            tlog.wall_time.append(time.perf_counter() - t0)
            if validation is not None and (it + 1) % cfg.epoch_length == 0:
                tlog.val_psnr.append((step, _validation_psnr(net.with_params(theta), validation, cfg.sigma, cfg.seed)))
            if on_checkpoint and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                on_checkpoint(net.with_params(theta), step)
            if it % 100 == 0:
                log.debug("%s it %d loss %.5g", pname, it, value)
        # moments restart for the fine-tuning phase
        state = AdamState.zeros(theta.size)
    return net.with_params(theta), tlog
