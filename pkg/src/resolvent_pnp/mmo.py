"""Maximally monotone operators represented through their resolvents.

A :class:`Resolvent` is a single-valued, firmly nonexpansive map ``J``.
Every such map is the resolvent ``(Id + A)^-1`` of exactly one maximally
monotone operator ``A``, so the algebra on operators (inversion, scaling,
unitary conjugation) is carried out on resolvents.

Certification here is stochastic: samplers draw point pairs and report the
worst observed margin.  A clean report is evidence, never a proof.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .io import write_csv
from .tensor import DenseMatrix, Identity, LinearMap, is_orthogonal, make_rng

__all__ = [
    "Resolvent",
    "ScalarProx",
    "StationaryCertificate",
    "CertReport",
    "CertificationWarning",
    "resolvent_from_nonexpansive",
    "reflected",
    "separable_unitary_mmo",
    "affine_mmo",
    "inverse_mmo",
    "scale_mmo",
    "check_firm_nonexpansive",
    "check_monotone",
    "check_stationary",
    "write_cert_reports",
]

DEFAULT_PAIRS = 10_000
DEFAULT_BOX = 10.0


class CertificationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Resolvent:
    """Handle on a firmly nonexpansive map ``J_A``.

    ``fn`` maps an array of shape ``shape`` to one of the same shape.  When
    ``vectorized`` is set it also accepts a leading batch axis.
    """

    fn: Callable
    shape: tuple
    provenance: str
    vectorized: bool = False
    certificate: Optional["StationaryCertificate"] = None
    reflection: Optional[Callable] = None
    notes: tuple = ()

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))

    def apply_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.vectorized:
            return self.fn(X)
        return np.stack([self.fn(x) for x in X])

    @property
    def dim(self):
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class ScalarProx:
    """Firmly nonexpansive map on the real line.

    kinds: ``identity``, ``soft_threshold`` (``tau``), ``interval``
    (``lo``, ``hi``) and ``table`` (monotone piecewise-linear through
    ``knots``/``values`` with slopes clamped to [0, 1]).
    """

    kind: str
    tau: float = 0.0
    lo: float = -np.inf
    hi: float = np.inf
    knots: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "soft_threshold", "interval", "table"):
            raise ValueError(f"unknown scalar prox kind {self.kind!r}")
        if self.kind == "soft_threshold" and self.tau < 0:
            raise ValueError("soft-threshold level must be nonnegative")
        if self.kind == "interval" and self.lo > self.hi:
            raise ValueError("interval needs lo <= hi")
        if self.kind == "table":
            xs = np.asarray(self.knots, dtype=np.float64)
            if xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ValueError("table knots must be strictly increasing, at least two")
            if len(self.values) != xs.size:
                raise ValueError("table needs one value per knot")
            slopes = np.clip(np.diff(self.values) / np.diff(xs), 0.0, 1.0)
            ys = np.concatenate([[self.values[0]], self.values[0] + np.cumsum(slopes * np.diff(xs))])
            object.__setattr__(self, "_ys", ys)
            object.__setattr__(self, "_slopes", slopes)

    @classmethod
    def soft_threshold(cls, tau):
        return cls("soft_threshold", tau=float(tau))

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def interval(cls, lo, hi):
        return cls("interval", lo=float(lo), hi=float(hi))

    @classmethod
    def table(cls, knots, values):
        return cls("table", knots=tuple(map(float, knots)), values=tuple(map(float, values)))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "identity":
            return t.copy()
        if self.kind == "soft_threshold":
            return np.sign(t) * np.maximum(np.abs(t) - self.tau, 0.0)
        if self.kind == "interval":
            return np.clip(t, self.lo, self.hi)
        xs = np.asarray(self.knots)
        ys, slopes = self._ys, self._slopes
        out = np.interp(t, xs, ys)
        out = np.where(t < xs[0], ys[0] + slopes[0] * (t - xs[0]), out)
        return np.where(t > xs[-1], ys[-1] + slopes[-1] * (t - xs[-1]), out)


@dataclass(frozen=True)
class StationaryCertificate:
    """Projections ``Pi_k`` (rows, shape ``(d_k, K)``) and weights ``Omega_k`` (``K x K``)."""

    projections: tuple
    weights: tuple

    MAX_DIM = 64

    def validate(self, tol=1e-10):
        """Raise ``ValueError`` unless the defining identities hold."""
        if len(self.projections) != len(self.weights) or not self.projections:
            raise ValueError("certificate needs matching, nonempty Pi/Omega lists")
        K = np.asarray(self.weights[0]).shape[0]
        if K > self.MAX_DIM:
            raise ValueError(f"certificates are limited to K <= {self.MAX_DIM}")
        total = np.zeros((K, K))
        omega = np.zeros((K, K))
        for P, W in zip(self.projections, self.weights):
            P = np.atleast_2d(P)
            W = np.asarray(W)
            if P.shape[1] != K or W.shape != (K, K):
                raise ValueError("inconsistent certificate shapes")
            if np.max(np.abs(W - W.T)) > tol:
                raise ValueError("Omega_k must be symmetric")
            if np.linalg.eigvalsh(W).min() < -tol:
                raise ValueError("Omega_k must be positive semidefinite")
            total += P.T @ P
            omega += W
        if np.max(np.abs(total - np.eye(K))) > tol:
            raise ValueError("sum of Pi_k* Pi_k is not the identity")
        if np.linalg.norm(omega, 2) > 1.0 + tol:
            raise ValueError("||sum Omega_k|| exceeds 1")
        return self

    @classmethod
    def coordinate(cls, K):
        """``Pi_k`` = k-th coordinate selector, ``Omega_k = Pi_k* Pi_k``."""
        eye = np.eye(K)
        P = tuple(eye[k : k + 1] for k in range(K))
        return cls(P, tuple(p.T @ p for p in P))


@dataclass
class CertReport:
    check: str
    samples: int
    max_violation: float
    worst_ratio: float = float("nan")
    tol: float = 1e-9

    @property
    def passed(self):
        return self.max_violation <= self.tol

    def row(self):
        return [self.check, self.samples, float(self.max_violation), float(self.worst_ratio)]


def write_cert_reports(path, reports):
    write_csv(path, ["check", "samples", "max_violation", "worst_ratio"], [r.row() for r in reports])


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def _vec_shape(shape):
    return (int(shape),) if np.isscalar(shape) else tuple(shape)


def _lipschitz_ratio(Q, shape, rng, pairs, box):
    worst = 0.0
    for _ in range(pairs):
        x = rng.uniform(-box, box, shape)
        y = rng.uniform(-box, box, shape)
        d = np.linalg.norm(x - y)
        if d > 0:
            worst = max(worst, np.linalg.norm(Q(x) - Q(y)) / d)
    return worst


def resolvent_from_nonexpansive(Q, shape, rng=None, pairs=1000, box=DEFAULT_BOX, vectorized=False):
    """``J = (Id + Q) / 2`` for a nonexpansive ``Q``.

    ``Q`` is sampled for its Lipschitz ratio; a ratio above ``1 + 1e-6``
    attaches a note and emits :class:`CertificationWarning` but the handle
    is still returned.
    """
    shape = _vec_shape(shape)
    notes = ()
    if pairs:
        ratio = _lipschitz_ratio(Q, shape, make_rng(0 if rng is None else rng), pairs, box)
        if ratio > 1.0 + 1e-6:
            msg = f"sampled Lipschitz ratio of Q is {ratio:.6g} > 1"
            warnings.warn(msg, CertificationWarning, stacklevel=2)
            notes = (msg,)

    def J(x):
        return 0.5 * (x + Q(x))

    return Resolvent(J, shape, "from-nonexpansive", vectorized=vectorized, reflection=Q, notes=notes)


def reflected(J):
    """Reflected resolvent ``Q = 2J - Id`` (exactly the original ``Q`` when known)."""
    if J.reflection is not None:
        return J.reflection

    def Q(x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * J.fn(x) - x

    return Q


def separable_unitary_mmo(U, proxes):
    """Resolvent of ``U* B U`` with ``B`` separable: ``J(x) = U*(prox_k((Ux)_k))_k``."""
    if not isinstance(U, LinearMap):
        U = DenseMatrix(U)
    if tuple(U.shape_in) != tuple(U.shape_out) or len(U.shape_in) != 1:
        raise ValueError("U must be a square map on vectors")
    K = U.shape_in[0]
    proxes = list(proxes)
    if len(proxes) != K:
        raise ValueError(f"need {K} scalar proxes, got {len(proxes)}")
    if not is_orthogonal(U):
        raise ValueError("U is not orthogonal (adjoint test failed)")

    def J(x):
        u = U.apply(x)
        out = np.empty_like(u)
        for k, p in enumerate(proxes):
            out[..., k] = p(u[..., k])
        return U.adjoint(out)

    cert = None
    if K <= StationaryCertificate.MAX_DIM:
        Um = U.to_dense()
        P = tuple(Um[k : k + 1] for k in range(K))
        cert = StationaryCertificate(P, tuple(p.T @ p for p in P))
    vectorized = not isinstance(U, DenseMatrix)
    return Resolvent(J, (K,), "separable-unitary", vectorized=vectorized, certificate=cert)


def affine_mmo(B, c=None):
    """Resolvent of ``A x = Bx + c`` for a matrix with ``B + B^T`` nonnegative."""
    B = np.asarray(B, dtype=np.float64)
    K = B.shape[0]
    if B.shape != (K, K):
        raise ValueError("B must be square")
    if np.linalg.eigvalsh(B + B.T).min() < -1e-12:
        raise ValueError("B + B^T must be positive semidefinite")
    c = np.zeros(K) if c is None else np.asarray(c, dtype=np.float64)
    R = np.linalg.inv(np.eye(K) + B)

    def J(x):
        return (x - c) @ R.T

    cert = None
    if K <= StationaryCertificate.MAX_DIM:
        Q = 2.0 * R - np.eye(K)
        eye = np.eye(K)
        P = tuple(eye[k : k + 1] for k in range(K))
        cert = StationaryCertificate(P, tuple(Q.T @ p.T @ p @ Q for p in P))
    return Resolvent(J, (K,), "affine", vectorized=True, certificate=cert)


def inverse_mmo(J):
    """Resolvent of ``A^-1``: ``Id - J``."""

    def Jinv(x):
        x = np.asarray(x, dtype=np.float64)
        return x - J.fn(x)

    refl = None
    if J.reflection is not None:
        base = J.reflection

        def refl(x):
            return -base(x)

    return Resolvent(
        Jinv, J.shape, f"inverse-of({J.provenance})", J.vectorized, J.certificate, refl
    )


def scale_mmo(J, rho):
    """Resolvent of ``rho A(. / rho)``: ``x -> rho J(x / rho)``."""
    rho = float(rho)
    if rho == 0.0:
        raise ValueError("rho must be nonzero")

    def Js(x):
        return rho * J.fn(np.asarray(x, dtype=np.float64) / rho)

    return Resolvent(Js, J.shape, f"scaled({J.provenance})", J.vectorized, J.certificate)


def identity_resolvent(shape):
    shape = _vec_shape(shape)
    ident = Identity(shape)
    return Resolvent(ident.apply, shape, "prox-closed-form", vectorized=True)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _sample_pairs(shape, rng, pairs, box):
    X = rng.uniform(-box, box, (pairs,) + tuple(shape))
    Y = rng.uniform(-box, box, (pairs,) + tuple(shape))
    return X, Y


def _flat(a):
    return a.reshape(a.shape[0], -1)


def check_firm_nonexpansive(J, rng=None, pairs=DEFAULT_PAIRS, box=DEFAULT_BOX, tol=1e-9):
    """Sample pairs in ``[-box, box]^K`` and report firm-nonexpansiveness margins.

    ``max_violation`` is the worst ``||Jx-Jy||^2 - <x-y, Jx-Jy>``;
    ``worst_ratio`` is the worst Lipschitz ratio of ``2J - Id``.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = make_rng(0 if rng is None else rng)
    X, Y = _sample_pairs(J.shape, rng, pairs, box)
    JX, JY = _flat(J.apply_batch(X)), _flat(J.apply_batch(Y))
    dx, dj = _flat(X) - _flat(Y), JX - JY
    viol = np.einsum("ij,ij->i", dj, dj) - np.einsum("ij,ij->i", dx, dj)
    dq = 2.0 * dj - dx
    nx = np.linalg.norm(dx, axis=1)
    ratio = np.linalg.norm(dq, axis=1) / np.where(nx > 0, nx, 1.0)
    return CertReport("firm_nonexpansive", pairs, float(viol.max()), float(ratio.max()), tol)


def check_monotone(J, rng=None, pairs=DEFAULT_PAIRS, box=DEFAULT_BOX, tol=1e-9):
    """Monotonicity of ``A`` on graph points ``(J z, z - J z)``."""
    rng = make_rng(0 if rng is None else rng)
    Z1, Z2 = _sample_pairs(J.shape, rng, pairs, box)
    X1, X2 = _flat(J.apply_batch(Z1)), _flat(J.apply_batch(Z2))
    U1, U2 = _flat(Z1) - X1, _flat(Z2) - X2
    ip = np.einsum("ij,ij->i", X1 - X2, U1 - U2)
    return CertReport("monotone", pairs, float(-ip.min()), tol=tol)


def check_stationary(J, cert, rng=None, pairs=DEFAULT_PAIRS, box=DEFAULT_BOX, tol=1e-9):
    """Worst ``||Pi_k(Qx - Qy)||^2 - <x-y, Omega_k(x-y)>`` over pairs and ``k``."""
    cert.validate()
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = make_rng(0 if rng is None else rng)
    X, Y = _sample_pairs(J.shape, rng, pairs, box)
    JX, JY = _flat(J.apply_batch(X)), _flat(J.apply_batch(Y))
    dx = _flat(X) - _flat(Y)
    dq = 2.0 * (JX - JY) - dx
    worst = -np.inf
    for P, W in zip(cert.projections, cert.weights):
        P = np.atleast_2d(P)
        lhs = np.sum((dq @ P.T) ** 2, axis=1)
        rhs = np.einsum("ij,ij->i", dx, dx @ np.asarray(W).T)
        worst = max(worst, float((lhs - rhs).max()))
    return CertReport("stationary", pairs, worst, tol=tol)
