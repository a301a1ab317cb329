"""scikit-learn style wrappers around training and plug-and-play restoration.

``ResolventDenoiser`` learns a firmly nonexpansive denoiser from clean
images; ``PnPFBRestorer`` runs forward-backward deblurring with either a
learned denoiser or a classical prox.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_images, check_scalar, restore_rank
from .inverse import BlurProblem
from .metrics import psnr
from .net import Network, image_denoiser, jacobian_spectral_norms
from .solve import SolveConfig, baseline_resolvent, fb_solve
from .tensor import CircularConvolution, make_rng
from .train import TrainConfig, train

__all__ = ["ResolventDenoiser", "PnPFBRestorer"]


class ResolventDenoiser(BaseEstimator, TransformerMixin):
    """Residual CNN trained with the Jacobian-norm penalty.

    ``fit(X)`` takes clean images ``(n, H, W)`` or ``(n, C, H, W)``;
    ``transform(Y)`` denoises; ``certify(Y)`` returns squared Jacobian norms
    of the reflected map at each input.
    """

    def __init__(
        self,
        lam=1e-2,
        sigma=0.01,
        eps=0.05,
        iterations=200,
        pretrain_iterations=0,
        batch_size=8,
        patch_size=0,
        lr=1e-3,
        power_iters=5,
        depth=6,
        width=16,
        random_state=0,
        warm_start=None,
    ):
        self.lam = lam
        self.sigma = sigma
        self.eps = eps
        self.iterations = iterations
        self.pretrain_iterations = pretrain_iterations
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lr = lr
        self.power_iters = power_iters
        self.depth = depth
        self.width = width
        self.random_state = random_state
        self.warm_start = warm_start

    def _config(self, channels):
        return TrainConfig(
            lam=float(self.lam),
            sigma=float(self.sigma),
            eps=float(self.eps),
            iterations=int(self.iterations),
            pretrain_iterations=int(self.pretrain_iterations),
            batch_size=int(self.batch_size),
            patch_size=int(self.patch_size),
            lr=float(self.lr),
            power_iters=int(self.power_iters),
            depth=int(self.depth),
            width=int(self.width),
            channels=channels,
            seed=int(self.random_state),
        )

    def fit(self, X, y=None):
        X, _ = check_images(X)
        cfg = self._config(X.shape[1])
        init = self.warm_start
        if isinstance(init, ResolventDenoiser):
            init = init.net_
        if init is not None and not isinstance(init, Network):
            raise TypeError("warm_start must be a Network or a fitted ResolventDenoiser")
        self.net_, self.log_ = train(X, cfg, init_net=init)
        self.n_channels_ = X.shape[1]
        return self

    def _checked(self, Y):
        check_is_fitted(self, "net_")
        Y, rank = check_images(Y, "Y")
        if Y.shape[1] != self.n_channels_:
            raise ValueError(f"expected {self.n_channels_} channels, got {Y.shape[1]}")
        return Y, rank

    def transform(self, Y):
        Y, rank = self._checked(Y)
        return restore_rank(self.net_.forward(Y), rank)

    def certify(self, Y, iters=50, random_state=0):
        """Squared spectral norm of ``dQ`` at each input (a 1-d array)."""
        Y, _ = self._checked(Y)
        s, _, _ = jacobian_spectral_norms(self.net_, Y, iters, random_state)
        return s**2

    def score(self, Y, X):
        """Mean PSNR of ``transform(Y)`` against clean ``X``."""
        out = np.asarray(self.transform(Y))
        X = check_array(X, "X")
        if out.shape != X.shape:
            raise ValueError("Y and X shapes differ")
        if out.ndim == 2:
            return psnr(out, X)
        return float(np.mean([psnr(a, b) for a, b in zip(out, X)]))


class PnPFBRestorer(BaseEstimator, TransformerMixin):
    """Forward-backward deblurring ``x <- J(x - gamma H*(Hx - z))``.

    ``denoiser`` is a :class:`Network`, a fitted :class:`ResolventDenoiser`
    or ``None`` together with ``baseline`` in ``{"l1", "tv"}``.  ``fit``
    validates the kernel and step; ``transform(Z)`` restores one image
    ``(H, W)`` or a stack ``(n, H, W)``.
    """

    def __init__(self, kernel, denoiser=None, baseline="pnp", gamma=None, reg=0.0, max_iter=1000, tol=None):
        self.kernel = kernel
        self.denoiser = denoiser
        self.baseline = baseline
        self.gamma = gamma
        self.reg = reg
        self.max_iter = max_iter
        self.tol = tol

    def _net(self):
        d = self.denoiser
        if isinstance(d, ResolventDenoiser):
            check_is_fitted(d, "net_")
            return d.net_
        if isinstance(d, Network):
            return d
        raise TypeError("baseline 'pnp' needs a Network or fitted ResolventDenoiser")

    def fit(self, Z=None, y=None):
        kernel = check_array(self.kernel, "kernel", ndim=2)
        if not np.any(kernel):
            raise ValueError("kernel is identically zero")
        if self.baseline not in ("pnp", "l1", "tv"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.baseline == "pnp":
            self._net()
        check_scalar(self.max_iter, "max_iter", low=1, integer=True)
        check_scalar(self.reg, "reg", low=0.0)
        shape = kernel.shape if Z is None else check_array(Z, "Z", ndim=(2, 3)).shape[-2:]
        self.mu_ = CircularConvolution(kernel, shape).exact_norm() ** 2
        gamma = 1.99 / self.mu_ if self.gamma is None else check_scalar(self.gamma, "gamma", low=0.0, low_open=True)
        if gamma >= 2.0 / self.mu_:
            raise ValueError(f"gamma={gamma} violates gamma < 2/mu = {2.0 / self.mu_:.6g}")
        self.gamma_ = gamma
        self.kernel_ = kernel
        return self

    def _resolvent(self, shape):
        if self.baseline == "pnp":
            return image_denoiser(self._net())
        return baseline_resolvent(self.baseline, shape, self.gamma_, self.reg)

    def restore(self, z):
        """Restore one observation; returns the full :class:`SolveReport`."""
        check_is_fitted(self, "gamma_")
        z = check_array(z, "z", ndim=2)
        prob = BlurProblem(self.kernel_, z, 0.0)
        H = prob.H
        mu = H.exact_norm() ** 2
        if self.gamma_ >= 2.0 / mu:
            raise ValueError("step too large for this image size")
        cfg = SolveConfig(self.gamma_, int(self.max_iter), self.tol, mu=mu)
        return fb_solve(lambda x: H.adjoint(H.apply(x) - z), self._resolvent(z.shape), cfg, z)

    def transform(self, Z):
        Z = check_array(Z, "Z", ndim=(2, 3))
        if Z.ndim == 2:
            return self.restore(Z).x
        return np.stack([self.restore(z).x for z in Z])


def noisy_copies(X, sigma, random_state=0):
    """``X`` plus white Gaussian noise, for probing and scoring."""
    X = check_array(X, "X")
    return X + sigma * make_rng(random_state).standard_normal(X.shape)
