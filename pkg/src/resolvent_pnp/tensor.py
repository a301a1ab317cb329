"""Dense float64 arrays, linear maps with adjoints, and power iteration.

Images are plain ``numpy.ndarray`` objects of dtype float64, laid out as
``(channels, height, width)`` or as flat vectors.  Linear maps expose a
forward ``apply`` and an ``adjoint`` that satisfy ``<Lx, y> = <x, L*y>``.

Convolution kernels are stored centered: the entry at index
``floor(size / 2)`` along each axis is the origin of the impulse response.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

__all__ = [
    "make_rng",
    "split_rng",
    "inner",
    "norm",
    "LinearMap",
    "Identity",
    "Scaled",
    "Composition",
    "DenseMatrix",
    "CircularConvolution",
    "HouseholderOrthogonal",
    "Haar",
    "circ_conv_apply",
    "circ_conv_direct",
    "kernel_symbol",
    "op_norm",
    "power_iteration",
    "orthogonal_from_seed",
    "is_orthogonal",
    "gaussian_kernel",
    "motion_kernel",
    "uniform_kernel",
    "STANDARD_KERNELS",
]


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------


def make_rng(seed=0):
    """Counter-based (Philox) generator; ``seed`` may also be a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def split_rng(seed, *keys):
    """Independent stream addressed by ``(seed, *keys)``.

    Streams depend only on the key path, never on call order, so work split
    across items or workers draws the same numbers serially or in parallel.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def inner(x, y):
    return float(np.vdot(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)))


def norm(x):
    return float(np.linalg.norm(np.ravel(x)))


# ---------------------------------------------------------------------------
# linear maps
# ---------------------------------------------------------------------------


class LinearMap:
    """Linear operator with paired forward and adjoint application.

    Subclasses set ``shape_in`` / ``shape_out`` and implement ``apply`` and
    ``adjoint``.  Instances are immutable.
    """

    shape_in: tuple
    shape_out: tuple

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    @property
    def T(self):
        return _Adjoint(self)

    def __matmul__(self, other):
        if isinstance(other, LinearMap):
            return Composition(self, other)
        return self.apply(other)

    def __mul__(self, c):
        return Scaled(self, c)

    __rmul__ = __mul__

    def to_dense(self):
        """Materialize as a matrix of shape (prod(shape_out), prod(shape_in))."""
        n = int(np.prod(self.shape_in))
        cols = []
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(np.ravel(self.apply(e.reshape(self.shape_in))))
        return np.stack(cols, axis=1)


class _Adjoint(LinearMap):
    def __init__(self, base):
        self.base = base
        self.shape_in = base.shape_out
        self.shape_out = base.shape_in

    def apply(self, x):
        return self.base.adjoint(x)

    def adjoint(self, y):
        return self.base.apply(y)


class Identity(LinearMap):
    def __init__(self, shape):
        self.shape_in = self.shape_out = _as_shape(shape)

    def apply(self, x):
        return np.array(x, dtype=np.float64, copy=True)

    adjoint = apply


class Scaled(LinearMap):
    def __init__(self, base, c):
        self.base = base
        self.c = float(c)
        self.shape_in = base.shape_in
        self.shape_out = base.shape_out

    def apply(self, x):
        return self.c * self.base.apply(x)

    def adjoint(self, y):
        return self.c * self.base.adjoint(y)


class Composition(LinearMap):
    """``outer @ inner``: applies ``inner`` first."""

    def __init__(self, outer, inner_):
        if tuple(outer.shape_in) != tuple(inner_.shape_out):
            raise ValueError(
                f"cannot compose: inner output {inner_.shape_out} != outer input {outer.shape_in}"
            )
        self.outer = outer
        self.inner = inner_
        self.shape_in = inner_.shape_in
        self.shape_out = outer.shape_out

    def apply(self, x):
        return self.outer.apply(self.inner.apply(x))

    def adjoint(self, y):
        return self.inner.adjoint(self.outer.adjoint(y))


class DenseMatrix(LinearMap):
    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("DenseMatrix expects a 2-d array")
        self.shape_out = (self.matrix.shape[0],)
        self.shape_in = (self.matrix.shape[1],)

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=np.float64)

    def adjoint(self, y):
        return self.matrix.T @ np.asarray(y, dtype=np.float64)

    def to_dense(self):
        return self.matrix.copy()


def _as_shape(shape):
    if np.isscalar(shape):
        return (int(shape),)
    return tuple(int(s) for s in shape)


# ---------------------------------------------------------------------------
# circular convolution
# ---------------------------------------------------------------------------


def _split_kernel(kernel, x):
    """Return (spatial kernel ndim, per_channel flag) after shape checks."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim == 3:
        nd, per_channel = 2, True
        if x.ndim < 3 or x.shape[-3] != kernel.shape[0]:
            raise ValueError(
                f"per-channel kernel {kernel.shape} needs input with {kernel.shape[0]} channels, got {x.shape}"
            )
    elif kernel.ndim in (1, 2):
        nd, per_channel = kernel.ndim, False
    else:
        raise ValueError(f"kernel must be 1-, 2- or 3-d, got shape {kernel.shape}")
    if x.ndim < nd:
        raise ValueError(f"input of shape {x.shape} has fewer than {nd} spatial axes")
    ks = kernel.shape[-nd:]
    xs = x.shape[-nd:]
    if any(k > s for k, s in zip(ks, xs)):
        raise ValueError(f"kernel extents {ks} exceed image extents {xs}")
    return nd, per_channel


def kernel_symbol(kernel, spatial_shape):
    """Real-input DFT of the kernel embedded with its center at the origin."""
    kernel = np.asarray(kernel, dtype=np.float64)
    nd = len(spatial_shape)
    lead = kernel.shape[:-nd]
    ks = kernel.shape[-nd:]
    pad = np.zeros(lead + tuple(spatial_shape))
    pad[(Ellipsis,) + tuple(slice(0, k) for k in ks)] = kernel
    shifts = tuple(-(k // 2) for k in ks)
    pad = np.roll(pad, shifts, axis=tuple(range(-nd, 0)))
    return scipy.fft.rfftn(pad, axes=tuple(range(-nd, 0)))


def _fft_friendly(shape):
    return all(scipy.fft.next_fast_len(int(n), real=True) == n for n in shape)


def circ_conv_direct(kernel, x, adjoint=False):
    """Periodic convolution by explicit summation over kernel taps."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    nd, per_channel = _split_kernel(kernel, x)
    axes = tuple(range(-nd, 0))
    ks = kernel.shape[-nd:]
    centers = [k // 2 for k in ks]
    out = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for idx in np.ndindex(*ks):
        shift = tuple(sign * (i - c) for i, c in zip(idx, centers))
        rolled = np.roll(x, shift, axis=axes)
        if per_channel:
            w = kernel[(slice(None),) + idx].reshape((-1,) + (1,) * nd)
        else:
            w = kernel[idx]
        out += w * rolled
    return out


def circ_conv_apply(kernel, x, adjoint=False, method="auto"):
    """Circular convolution of ``x`` with a centered ``kernel``.

    ``adjoint=True`` applies the correlation (flipped kernel).  A 2-d kernel
    is broadcast over leading channel axes; a 3-d kernel ``(C, kh, kw)`` acts
    channel by channel.  ``method`` is ``"fft"``, ``"direct"`` or ``"auto"``
    (FFT when every extent factors into small primes and the kernel has
    more than one tap, so a single-tap kernel stays exact).
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    nd, _ = _split_kernel(kernel, x)
    spatial = x.shape[-nd:]
    if method == "auto":
        taps = int(np.prod(kernel.shape[-nd:]))
        method = "fft" if taps > 1 and _fft_friendly(spatial) else "direct"
    if method == "direct":
        return circ_conv_direct(kernel, x, adjoint=adjoint)
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    axes = tuple(range(-nd, 0))
    sym = kernel_symbol(kernel, spatial)
    if adjoint:
        sym = np.conj(sym)
    X = scipy.fft.rfftn(x, axes=axes)
    return scipy.fft.irfftn(X * sym, s=spatial, axes=axes)


class CircularConvolution(LinearMap):
    """Periodic blur ``H`` on images of a fixed shape."""

    def __init__(self, kernel, image_shape, method="auto"):
        self.kernel = np.array(kernel, dtype=np.float64)
        self.shape_in = self.shape_out = _as_shape(image_shape)
        _split_kernel(self.kernel, np.empty(self.shape_in))
        self.method = method

    def apply(self, x):
        return circ_conv_apply(self.kernel, x, method=self.method)

    def adjoint(self, y):
        return circ_conv_apply(self.kernel, y, adjoint=True, method=self.method)

    def exact_norm(self):
        """``max |h_hat|`` over frequencies (and channels)."""
        nd = 1 if self.kernel.ndim == 1 else 2
        return float(np.max(np.abs(kernel_symbol(self.kernel, self.shape_in[-nd:]))))


# ---------------------------------------------------------------------------
# orthogonal maps
# ---------------------------------------------------------------------------


class HouseholderOrthogonal(LinearMap):
    """Product of Householder reflections acting on the last axis."""

    def __init__(self, vectors):
        v = np.array(vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("vectors must be a 2-d array (count, dim)")
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("Householder vectors must be nonzero")
        self.vectors = v / norms
        self.shape_in = self.shape_out = (v.shape[1],)

    def _reflect(self, x, order):
        x = np.array(x, dtype=np.float64, copy=True)
        for k in order:
            v = self.vectors[k]
            x -= 2.0 * (x @ v)[..., None] * v
        return x

    def apply(self, x):
        return self._reflect(x, range(len(self.vectors) - 1, -1, -1))

    def adjoint(self, y):
        return self._reflect(y, range(len(self.vectors)))


def orthogonal_from_seed(seed, dim):
    """Deterministic orthogonal map: ``dim`` Householder reflections from seeded Gaussians."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = make_rng(seed)
    return HouseholderOrthogonal(rng.standard_normal((dim, dim)))


def is_orthogonal(L, rng=None, trials=4, tol=1e-10):
    """Randomized check of ``L*L = Id`` and ``LL* = Id``."""
    rng = make_rng(1234 if rng is None else rng)
    if tuple(L.shape_in) != tuple(L.shape_out):
        return False
    for _ in range(trials):
        x = rng.standard_normal(L.shape_in)
        nx = np.linalg.norm(x)
        if np.linalg.norm(L.adjoint(L.apply(x)) - x) > tol * nx:
            return False
        if np.linalg.norm(L.apply(L.adjoint(x)) - x) > tol * nx:
            return False
    return True


class Haar(LinearMap):
    """Orthonormal multi-level Haar transform on the last one or two axes.

    The coefficient array has the input's shape; coarse approximation
    coefficients sit in the leading corner.
    """

    def __init__(self, shape, levels=1):
        self.shape_in = self.shape_out = _as_shape(shape)
        self.levels = int(levels)
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        nd = min(2, len(self.shape_in))
        self.nd = nd
        for n in self.shape_in[-nd:]:
            if n % (2 ** self.levels):
                raise ValueError(f"extent {n} not divisible by 2**{self.levels}")

    @staticmethod
    def _fwd1(a, axis):
        a = np.moveaxis(a, axis, -1)
        ev, od = a[..., 0::2], a[..., 1::2]
        out = np.concatenate([(ev + od), (ev - od)], axis=-1) / np.sqrt(2.0)
        return np.moveaxis(out, -1, axis)

    @staticmethod
    def _inv1(a, axis):
        a = np.moveaxis(a, axis, -1)
        n = a.shape[-1] // 2
        s, d = a[..., :n], a[..., n:]
        out = np.empty_like(a)
        out[..., 0::2] = (s + d) / np.sqrt(2.0)
        out[..., 1::2] = (s - d) / np.sqrt(2.0)
        return np.moveaxis(out, -1, axis)

    def apply(self, x):
        out = np.array(x, dtype=np.float64, copy=True)
        sizes = list(out.shape[-self.nd:])
        for _ in range(self.levels):
            region = (Ellipsis,) + tuple(slice(0, s) for s in sizes)
            block = out[region]
            for ax in range(-self.nd, 0):
                block = self._fwd1(block, ax)
            out[region] = block
            sizes = [s // 2 for s in sizes]
        return out

    def adjoint(self, y):
        out = np.array(y, dtype=np.float64, copy=True)
        base = list(out.shape[-self.nd:])
        for lev in range(self.levels - 1, -1, -1):
            sizes = [s // (2 ** lev) for s in base]
            region = (Ellipsis,) + tuple(slice(0, s) for s in sizes)
            block = out[region]
            for ax in range(-1, -self.nd - 1, -1):
                block = self._inv1(block, ax)
            out[region] = block
        return out


# ---------------------------------------------------------------------------
# power iteration
# ---------------------------------------------------------------------------


def power_iteration(forward, adjoint, shape, iters, rng, return_history=False):
    """Largest singular value of an operator known through products.

    Iterates ``v <- B*Bv / ||B*Bv||`` from a Gaussian start and returns
    ``(sigma, v)`` where ``sigma = ||B v||`` for the final unit vector ``v``.
    The estimate is nondecreasing in ``iters`` and never exceeds ``||B||``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = make_rng(rng)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    history = []
    for _ in range(iters):
        w = forward(v)
        history.append(np.linalg.norm(w))
        z = adjoint(w)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            sigma = 0.0
            return (sigma, v, history) if return_history else (sigma, v)
        v = z / nz
    sigma = float(np.linalg.norm(forward(v)))
    history.append(sigma)
    if return_history:
        return sigma, v, history
    return sigma, v


def op_norm(L, iters=100, rng=0):
    """Power-iteration estimate of ``||L||``; 0 for the zero operator."""
    sigma, _ = power_iteration(L.apply, L.adjoint, L.shape_in, iters, rng)
    return sigma


# ---------------------------------------------------------------------------
# procedural blur kernels
# ---------------------------------------------------------------------------


def gaussian_kernel(size=7, std=1.2):
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / std) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def uniform_kernel(size=5):
    return np.full((size, size), 1.0 / size**2)


def motion_kernel(length=7, angle=30.0, size=None):
    """Line-shaped motion blur, anti-aliased by supersampling."""
    size = size or (length if length % 2 else length + 1)
    k = np.zeros((size, size))
    c = size // 2
    theta = np.deg2rad(angle)
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, 16 * length):
        y = c - t * np.sin(theta)
        x = c + t * np.cos(theta)
        i0, j0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - i0, x - j0
        for di, wy in ((0, 1 - fy), (1, fy)):
            for dj, wx in ((0, 1 - fx), (1, fx)):
                i, j = i0 + di, j0 + dj
                if 0 <= i < size and 0 <= j < size:
                    k[i, j] += wy * wx
    return k / k.sum()


STANDARD_KERNELS = {
    "gaussian": lambda: gaussian_kernel(7, 1.2),
    "gaussian-wide": lambda: gaussian_kernel(9, 1.8),
    "motion": lambda: motion_kernel(7, 30.0),
    "uniform": lambda: uniform_kernel(5),
}
