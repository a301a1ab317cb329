"""Feedforward networks with hand-written reverse- and forward-mode passes.

A :class:`Network` evaluates ``J(x) = r*x + T_M(...T_1(x))`` where each
layer is ``T_m(x) = R_m(W_m x + b_m)`` and ``r`` is 1 when the residual skip
is on.  Its reflected map is ``Q = 2J - Id``.

All supported activations (identity, leaky rectifier, pairwise sort) are
piecewise linear, so the Jacobian of the network is locally constant in
``x`` and its dependence on the parameters runs only through the weights.
That makes the parameter gradient of ``||dQ(x) u||^2`` a plain backward pass
through the tangent chain.

Arrays carry a leading batch axis internally: ``(n, features)`` for dense
networks and ``(n, channels, height, width)`` for convolutional ones.
Public methods accept a single sample as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mmo import Resolvent
from .tensor import Composition, DenseMatrix, LinearMap, make_rng, power_iteration

__all__ = [
    "Activation",
    "DenseLayer",
    "ConvLayer",
    "Network",
    "JacobianProbe",
    "build_conv_network",
    "build_dense_network",
    "as_resolvent",
    "image_denoiser",
    "jacobian_spectral_norm",
    "jacobian_spectral_norms",
    "dense_jacobian",
    "sigma2_frozen",
    "penalty_grad",
    "layer_norm",
    "lipschitz_bound_product",
    "lipschitz_bound_enum",
    "lipschitz_bound_nonneg",
    "sampled_lipschitz_ratio",
]

MAX_DENSE_JACOBIAN = 1024
MAX_ENUM_WIDTH = 20


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


_DEFAULT_ALPHA = {"identity": 0.0, "leaky": 0.5, "sort_pairs": 1.0}


@dataclass(frozen=True)
class Activation:
    """Activation descriptor.  ``alpha`` is the averagedness constant used by the
    enumeration bound; leaky rectifiers are 1/2-averaged for any slope in
    (0, 1)."""

    kind: str = "leaky"
    slope: float = 0.2
    alpha: float = None

    def __post_init__(self):
        if self.kind not in _DEFAULT_ALPHA:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky slope must lie in (0, 1)")
        if self.alpha is None:
            object.__setattr__(self, "alpha", _DEFAULT_ALPHA[self.kind])
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def separable(self):
        return self.kind != "sort_pairs"

    def forward(self, z):
        """Return ``(R(z), pattern)``; the pattern fixes the local linear piece."""
        if self.kind == "identity":
            return z, None
        if self.kind == "leaky":
            d = np.where(z > 0, 1.0, self.slope)
            return d * z, d
        if z.shape[1] % 2:
            raise ValueError("sort_pairs needs an even number of features")
        swap = z[:, 0::2] > z[:, 1::2]
        return _swap_pairs(z, swap), swap

    def linear(self, pattern, v):
        """Apply the local linear piece (self-adjoint for all kinds)."""
        if self.kind == "identity":
            return v
        if self.kind == "leaky":
            return pattern * v
        return _swap_pairs(v, pattern)


def _swap_pairs(z, swap):
    a, b = z[:, 0::2], z[:, 1::2]
    out = np.empty(np.broadcast_shapes(z.shape, (swap.shape[0],) + z.shape[1:]))
    out[:, 0::2] = np.where(swap, b, a)
    out[:, 1::2] = np.where(swap, a, b)
    return out


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class DenseLayer:
    kind = "dense"

    def __init__(self, weight, bias=None, activation=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("dense weight must be 2-d (out, in)")
        self.bias = np.zeros(self.weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal out features")
        self.activation = activation or Activation("identity")

    out_features = property(lambda self: self.weight.shape[0])
    in_features = property(lambda self: self.weight.shape[1])
    kernel_size = 1

    def linear(self, x):
        return x @ self.weight.T, x

    def linear_T(self, g):
        return g @ self.weight

    def weight_grad(self, g, cache):
        return g.T @ cache

    def bias_grad(self, g):
        return g.sum(axis=0)

    def linear_map(self, grid=None):
        return DenseMatrix(self.weight)

    def replace(self, weight, bias):
        return DenseLayer(weight, bias, self.activation)


class ConvLayer:
    """Circular-padded 2-d convolution bank ``(out, in, k, k)``, odd ``k``.

    Uses the cross-correlation convention:
    ``y[o, h, w] = sum W[o, i, p, q] x[i, h + p - c, w + q - c]``, ``c = k // 2``.
    """

    kind = "conv"

    def __init__(self, weight, bias=None, activation=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError("conv weight must be (out, in, k, k)")
        if self.weight.shape[2] % 2 == 0:
            raise ValueError("conv kernel extent must be odd")
        self.bias = np.zeros(self.weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal out channels")
        self.activation = activation or Activation("identity")
        self._wm = self.weight.reshape(self.weight.shape[0], -1)
        # adjoint = correlation with spatially flipped, channel-transposed bank
        self._wm_T = np.ascontiguousarray(
            self.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        ).reshape(self.weight.shape[1], -1)

    out_features = property(lambda self: self.weight.shape[0])
    in_features = property(lambda self: self.weight.shape[1])
    kernel_size = property(lambda self: self.weight.shape[2])

    def _unfold(self, x):
        """Periodic im2col: ``(n, C*k*k, H*W)``."""
        n, ch, h, w = x.shape
        k = self.kernel_size
        c = k // 2
        if c == 0:
            return x.reshape(n, ch, h * w)
        if c > h or c > w:
            raise ValueError("kernel larger than the periodic image")
        xp = np.empty((n, ch, h + 2 * c, w + 2 * c))
        xp[:, :, c:-c, c:-c] = x
        xp[:, :, :c, c:-c] = x[:, :, -c:, :]
        xp[:, :, -c:, c:-c] = x[:, :, :c, :]
        xp[:, :, :, :c] = xp[:, :, :, w : w + c]
        xp[:, :, :, -c:] = xp[:, :, :, c : 2 * c]
        U = np.empty((n, ch, k, k, h, w))
        for p in range(k):
            for q in range(k):
                U[:, :, p, q] = xp[:, :, p : p + h, q : q + w]
        return U.reshape(n, ch * k * k, h * w)

    @staticmethod
    def _conv(U, wm, n, h, w):
        return np.matmul(wm, U).reshape(n, wm.shape[0], h, w)

    def linear(self, x):
        n, _, h, w = x.shape
        U = self._unfold(x)
        return self._conv(U, self._wm, n, h, w), U

    def linear_T(self, g):
        n, _, h, w = g.shape
        return self._conv(self._unfold(g), self._wm_T, n, h, w)

    def weight_grad(self, g, cache):
        n = g.shape[0]
        gm = g.reshape(n, self.out_features, -1)
        return np.matmul(gm, cache.transpose(0, 2, 1)).sum(axis=0).reshape(self.weight.shape)

    def bias_grad(self, g):
        return g.sum(axis=(0, 2, 3))

    def linear_map(self, grid):
        return _ConvMap(self, grid)

    def replace(self, weight, bias):
        return ConvLayer(weight, bias, self.activation)


class _ConvMap(LinearMap):
    def __init__(self, layer, grid):
        h, w = grid
        self.layer = layer
        self.shape_in = (layer.in_features, h, w)
        self.shape_out = (layer.out_features, h, w)

    def apply(self, x):
        return self.layer.linear(np.asarray(x)[None])[0][0]

    def adjoint(self, y):
        return self.layer.linear_T(np.asarray(y)[None])[0]


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class Network:
    """Residual (or plain) feedforward network ``J``; see module docstring."""

    def __init__(self, layers, residual=True):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        kinds = {layer.kind for layer in layers}
        if len(kinds) != 1:
            raise ValueError("layers must be all dense or all conv")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_features != b.in_features:
                raise ValueError(f"layer {i} outputs {a.out_features} features, layer {i + 1} expects {b.in_features}")
        if residual and layers[0].in_features != layers[-1].out_features:
            raise ValueError("residual skip needs matching input and output features")
        self.layers = layers
        self.residual = bool(residual)
        self.kind = layers[0].kind
        self._sample_ndim = 1 if self.kind == "dense" else 3

    # -- parameters -------------------------------------------------------

    @property
    def channels_in(self):
        return self.layers[0].in_features

    @property
    def channels_out(self):
        return self.layers[-1].out_features

    @property
    def n_params(self):
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def get_params(self):
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        layers, pos = [], 0
        for l in self.layers:
            nw, nb = l.weight.size, l.bias.size
            w = theta[pos : pos + nw].reshape(l.weight.shape)
            b = theta[pos + nw : pos + nw + nb]
            layers.append(l.replace(w, b))
            pos += nw + nb
        return Network(layers, self.residual)

    def scaled(self, factor):
        """Copy with every weight multiplied by ``factor`` (biases kept)."""
        return Network([l.replace(l.weight * factor, l.bias.copy()) for l in self.layers], self.residual)

    def _flatten_grads(self, grads):
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])

    # -- batching ---------------------------------------------------------

    def _batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == self._sample_ndim:
            return x[None], True
        if x.ndim == self._sample_ndim + 1:
            return x, False
        raise ValueError(f"expected a sample of rank {self._sample_ndim} or a batch, got shape {x.shape}")

    def _check_input(self, X):
        if X.shape[1] != self.channels_in:
            raise ValueError(f"input has {X.shape[1]} channels/features, network expects {self.channels_in}")

    # -- core passes (batched) ---------------------------------------------

    def _forward(self, X):
        self._check_input(X)
        caches = []
        h = X
        for layer in self.layers:
            z, lin_cache = layer.linear(h)
            z = z + (layer.bias if layer.kind == "dense" else layer.bias[:, None, None])
            h, pattern = layer.activation.forward(z)
            caches.append((lin_cache, pattern))
        return h, caches

    def _backward(self, caches, G, params=True, bias=True):
        """Reverse pass through a recorded chain.  Returns (param grads or None, input grad)."""
        grads = []
        g = G
        for layer, (lin_cache, pattern) in zip(reversed(self.layers), reversed(caches)):
            gz = layer.activation.linear(pattern, g)
            if params:
                gb = layer.bias_grad(gz) if bias else np.zeros_like(layer.bias)
                grads.append((layer.weight_grad(gz, lin_cache), gb))
            g = layer.linear_T(gz)
        if params:
            return self._flatten_grads(grads[::-1]), g
        return None, g

    def _tangent(self, caches, V, record=False):
        """Forward-mode pass at the recorded point; optionally record for a reverse pass."""
        t = V
        rec = []
        for layer, (_, pattern) in zip(self.layers, caches):
            dz, lin_cache = layer.linear(t)
            t = layer.activation.linear(pattern, dz)
            if record:
                rec.append((lin_cache, pattern))
        return t, rec

    @property
    def _q_skip(self):
        # Q = 2J - Id = (2r - 1) Id + 2 chain
        return 2.0 * float(self.residual) - 1.0

    def _jvp_q(self, caches, V):
        T, _ = self._tangent(caches, V)
        return self._q_skip * V + 2.0 * T

    def _vjp_q(self, caches, U):
        _, g = self._backward(caches, U, params=False)
        return self._q_skip * U + 2.0 * g

    # -- public API ----------------------------------------------------------

    def chain(self, x):
        X, single = self._batch(x)
        out, _ = self._forward(X)
        return out[0] if single else out

    def forward(self, x):
        X, single = self._batch(x)
        out, _ = self._forward(X)
        if self.residual:
            out = out + X
        return out[0] if single else out

    __call__ = forward

    def reflected(self, x):
        """``Q(x) = 2J(x) - x``."""
        X = np.asarray(x, dtype=np.float64)
        return 2.0 * self.forward(X) - X

    def vjp(self, x, cotangent):
        """``(u^T dJ/dtheta, u^T dJ/dx)``; parameter gradient summed over a batch."""
        X, single = self._batch(x)
        U = np.asarray(cotangent, dtype=np.float64)
        U = U[None] if single else U
        _, caches = self._forward(X)
        if U.shape[:1] + U.shape[1:] != X.shape[:1] + _out_tail(self, X):
            raise ValueError(f"cotangent shape {np.shape(cotangent)} does not match output")
        gtheta, gx = self._backward(caches, U)
        if self.residual:
            gx = gx + U
        return gtheta, (gx[0] if single else gx)

    def jvp(self, x, tangent):
        """``dJ/dx . v`` by forward-mode propagation."""
        X, single = self._batch(x)
        V = np.asarray(tangent, dtype=np.float64)
        V = V[None] if single else V
        if V.shape != X.shape:
            raise ValueError(f"tangent shape {np.shape(tangent)} does not match input {np.shape(x)}")
        _, caches = self._forward(X)
        T, _ = self._tangent(caches, V)
        if self.residual:
            T = T + V
        return T[0] if single else T


def _out_tail(net, X):
    if net.kind == "dense":
        return (net.channels_out,)
    return (net.channels_out,) + X.shape[2:]


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_conv_network(depth=6, width=16, channels=1, kernel_size=3, slope=0.2, residual=True, rng=0):
    """Scaled-down DnCNN-style residual net with He-scaled Gaussian weights.

    Hidden layers use leaky rectifiers, the last layer is linear, biases
    start at zero.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = make_rng(rng)
    sizes = [channels] + [width] * (depth - 1) + [channels]
    layers = []
    for m in range(depth):
        fan_in = sizes[m] * kernel_size**2
        w = rng.standard_normal((sizes[m + 1], sizes[m], kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
        act = Activation("identity") if m == depth - 1 else Activation("leaky", slope)
        layers.append(ConvLayer(w, np.zeros(sizes[m + 1]), act))
    return Network(layers, residual)


def build_dense_network(sizes, slope=0.2, residual=True, rng=0, hidden="leaky", gain=1.0):
    """Dense net with layer widths ``sizes`` (input first, output last)."""
    rng = make_rng(rng)
    layers = []
    for m in range(len(sizes) - 1):
        w = rng.standard_normal((sizes[m + 1], sizes[m])) * gain * np.sqrt(2.0 / sizes[m])
        last = m == len(sizes) - 2
        act = Activation("identity") if last else Activation(hidden, slope)
        layers.append(DenseLayer(w, np.zeros(sizes[m + 1]), act))
    return Network(layers, residual)


def as_resolvent(net, shape):
    """Wrap a network as a :class:`Resolvent` handle on samples of ``shape``."""
    return Resolvent(net.forward, tuple(shape), "network", vectorized=True)


def image_denoiser(net):
    """``J`` acting on images: ``(H, W)`` for one-channel nets, ``(C, H, W)`` otherwise."""
    if net.layers[0].kind != "conv":
        raise ValueError("image_denoiser needs a convolutional network")
    if net.channels_in == 1:
        return lambda x: net.forward(np.asarray(x, dtype=np.float64)[None])[0]
    return net.forward


# ---------------------------------------------------------------------------
# Jacobian spectral norm
# ---------------------------------------------------------------------------


@dataclass
class JacobianProbe:
    point: np.ndarray
    iterations: int
    seed: int
    sigma: float
    right: np.ndarray
    left: np.ndarray
    history: list = field(default_factory=list)


def _bnorm(A):
    return np.sqrt(np.sum(A.reshape(A.shape[0], -1) ** 2, axis=1))


def _bshape(v, A):
    return v.reshape((-1,) + (1,) * (A.ndim - 1))


def _power_batched(net, caches, V, iters):
    v = V / _bshape(_bnorm(V), V)
    history = []
    for _ in range(iters):
        w = net._jvp_q(caches, v)
        history.append(_bnorm(w))
        z = net._vjp_q(caches, w)
        nz = _bnorm(z)
        nz = np.where(nz > 0, nz, 1.0)
        v = z / _bshape(nz, z)
    w = net._jvp_q(caches, v)
    sigma = _bnorm(w)
    history.append(sigma)
    return sigma, v, w, np.array(history)


def jacobian_spectral_norms(net, X, iters=5, rng=0):
    """Batched power iteration on ``dQ(x)^T dQ(x)``.

    Returns ``(sigma, U, history)`` with one unit right vector per point and
    the Rayleigh estimates per iteration (shape ``(iters + 1, n)``).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    X, _ = net._batch(X)
    _, caches = net._forward(X)
    V = make_rng(rng).standard_normal(X.shape)
    sigma, U, _, hist = _power_batched(net, caches, V, iters)
    return sigma, U, hist


def jacobian_spectral_norm(net, x, iters=5, rng=0):
    """``||dQ(x)||`` for ``Q = 2J - Id`` via ``iters`` power iterations."""
    X, _ = net._batch(x)
    if X.shape[0] != 1:
        raise ValueError("jacobian_spectral_norm takes a single point; use jacobian_spectral_norms")
    _, caches = net._forward(X)
    seed = rng if isinstance(rng, (int, np.integer)) else -1
    V = make_rng(rng).standard_normal(X.shape)
    sigma, U, W, hist = _power_batched(net, caches, V, iters)
    s = float(sigma[0])
    left = W[0] / s if s > 0 else W[0]
    return JacobianProbe(np.asarray(x), iters, seed, s, U[0], left, list(hist[:, 0]))


def dense_jacobian(net, x, which="Q", mode="jvp"):
    """Materialize ``dQ(x)`` (or ``dJ(x)`` with ``which="J"``).

    ``mode="jvp"`` assembles columns from basis tangents, ``mode="vjp"`` rows
    from basis cotangents.  Test oracle only; refuses inputs above 1024 entries.
    """
    X, _ = net._batch(x)
    if X.shape[0] != 1:
        raise ValueError("dense_jacobian takes a single point")
    shape = X.shape[1:]
    n = int(np.prod(shape))
    if n > MAX_DENSE_JACOBIAN:
        raise ValueError(f"input dimension {n} exceeds the dense-Jacobian limit {MAX_DENSE_JACOBIAN}")
    _, caches = net._forward(X)
    E = np.eye(n).reshape((n,) + shape)
    if which == "Q":
        skip, scale = net._q_skip, 2.0
    elif which == "J":
        skip, scale = float(net.residual), 1.0
    else:
        raise ValueError("which must be 'Q' or 'J'")
    if mode == "jvp":
        T, _ = net._tangent(caches, E)
        cols = skip * E + scale * T
        return cols.reshape(n, -1).T
    if mode == "vjp":
        out_n = int(np.prod(_out_tail(net, X)))
        Eo = np.eye(out_n).reshape((out_n,) + _out_tail(net, X))
        _, g = net._backward(caches, Eo, params=False)
        if skip:
            g = scale * g + skip * Eo
        else:
            g = scale * g
        return g.reshape(out_n, -1)
    raise ValueError("mode must be 'jvp' or 'vjp'")


def _penalty_backward(net, caches, U, weights):
    """Per-point ``s = ||dQ(x) u||^2`` and ``sum_i weights_i ds_i/dtheta``."""
    T, rec = net._tangent(caches, U, record=True)
    q = net._q_skip * U + 2.0 * T
    s = _bnorm(q) ** 2
    # ds/dT = 2 q * 2
    G = 4.0 * q * _bshape(np.asarray(weights, dtype=np.float64), q)
    grad, _ = net._backward(rec, G, params=True, bias=False)
    return s, grad


def sigma2_frozen(net, x, u):
    """``||dQ(x) u||^2`` for a fixed direction ``u``."""
    X, single = net._batch(x)
    U = np.asarray(u, dtype=np.float64)
    U = U[None] if single else U
    _, caches = net._forward(X)
    q = net._jvp_q(caches, U)
    s = _bnorm(q) ** 2
    return float(s[0]) if single else s


def penalty_grad(net, x, iters=5, rng=0, return_direction=False):
    """``(sigma^2, d sigma^2 / d theta)`` at ``x`` with the singular vector frozen."""
    X, _ = net._batch(x)
    if X.shape[0] != 1:
        raise ValueError("penalty_grad takes a single point")
    _, caches = net._forward(X)
    V = make_rng(rng).standard_normal(X.shape)
    _, U, _, _ = _power_batched(net, caches, V, iters)
    s, grad = _penalty_backward(net, caches, U, np.ones(1))
    if return_direction:
        return float(s[0]), grad, U[0]
    return float(s[0]), grad


# ---------------------------------------------------------------------------
# sufficient conditions for a nonexpansive chain
# ---------------------------------------------------------------------------


def layer_norm(layer, grid=None):
    """Exact operator norm of a layer's linear part.

    Convolutions with circular padding are block-circulant; the norm is the
    largest singular value of the per-frequency ``(out, in)`` symbol.
    """
    if layer.kind == "dense":
        return float(np.linalg.norm(layer.weight, 2))
    if grid is None:
        raise ValueError("conv layer norms depend on the image grid; pass grid=(H, W)")
    h, w = grid
    k = layer.kernel_size
    c = k // 2
    pad = np.zeros(layer.weight.shape[:2] + (h, w))
    pad[:, :, :k, :k] = layer.weight
    pad = np.roll(pad, (-c, -c), axis=(2, 3))
    sym = np.fft.rfft2(pad)  # (out, in, h, w//2+1)
    sym = np.moveaxis(sym.reshape(sym.shape[0], sym.shape[1], -1), -1, 0)
    return float(np.linalg.svd(sym, compute_uv=False).max())


def lipschitz_bound_product(net, grid=None, method="exact", iters=200, rng=0):
    """``prod_m ||W_m||`` over the chain; <= 1 certifies it nonexpansive."""
    out = 1.0
    for layer in net.layers:
        if method == "exact":
            out *= layer_norm(layer, grid)
        else:
            from .tensor import op_norm

            out *= op_norm(layer.linear_map(grid), iters=iters, rng=rng)
    return out


def lipschitz_bound_enum(net, chunk=4096):
    """``max ||W_M L_{M-1} ... L_1 W_1||`` over diagonals with entries in ``{1 - 2 alpha_m, 1}``.

    Dense networks with separable hidden activations only; total hidden
    width at most 20.
    """
    if net.kind != "dense":
        raise ValueError("enumeration bound is implemented for dense networks")
    hidden = net.layers[:-1]
    for i, layer in enumerate(hidden):
        if not layer.activation.separable:
            raise ValueError(f"layer {i} activation is not separable")
    width = sum(layer.out_features for layer in hidden)
    if width > MAX_ENUM_WIDTH:
        raise ValueError(f"total hidden width {width} exceeds enumeration limit {MAX_ENUM_WIDTH}")
    levels = []
    for layer in hidden:
        lo = 1.0 - 2.0 * layer.activation.alpha
        vals = (1.0,) if lo == 1.0 else (lo, 1.0)
        levels.extend([vals] * layer.out_features)
    best = 0.0
    combos = itertools.product(*levels)
    W = [layer.weight for layer in net.layers]
    while True:
        block = np.array(list(itertools.islice(combos, chunk)))
        if block.size == 0:
            if not levels and best == 0.0:
                best = float(np.linalg.norm(W[0], 2))
            break
        M = np.broadcast_to(W[0], (len(block),) + W[0].shape)
        pos = 0
        for m, layer in enumerate(hidden):
            d = block[:, pos : pos + layer.out_features]
            pos += layer.out_features
            M = np.matmul(W[m + 1], d[:, :, None] * M)
        best = max(best, float(np.linalg.svd(M, compute_uv=False)[:, 0].max()))
    return best


def lipschitz_bound_nonneg(net, grid=None, iters=200, rng=0):
    """``||W_M ... W_1||`` by power iteration; requires nonnegative weights."""
    for i, layer in enumerate(net.layers):
        if np.any(layer.weight < 0):
            raise ValueError(f"layer {i} has negative weights; nonnegative bound does not apply")
    chain = None
    for layer in net.layers:
        L = layer.linear_map(grid)
        chain = L if chain is None else Composition(L, chain)
    sigma, _ = power_iteration(chain.apply, chain.adjoint, chain.shape_in, iters, rng)
    return sigma


def sampled_lipschitz_ratio(fn, shape, rng=0, pairs=2000, box=1.0, local=None):
    """Worst ``||f(x) - f(y)|| / ||x - y||`` over random pairs.

    With ``local`` set, ``y`` is drawn within that radius of ``x``.
    """
    rng = make_rng(rng)
    X = rng.uniform(-box, box, (pairs,) + tuple(shape))
    if local is None:
        Y = rng.uniform(-box, box, (pairs,) + tuple(shape))
    else:
        Y = X + rng.uniform(-local, local, X.shape)
    d = _bnorm(X - Y)
    r = _bnorm(fn(X) - fn(Y)) / np.where(d > 0, d, 1.0)
    return float(r.max())
