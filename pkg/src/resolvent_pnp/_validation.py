"""Input checks shared by the estimators and the command line."""

import numbers

import numpy as np


def check_array(x, name="x", ndim=None, finite=True):
    """Return ``x`` as a float64 array, checking rank and finiteness."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} must be a numeric array") from exc
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in allowed:
            raise ValueError(f"{name} must have rank in {allowed}, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_images(X, name="X"):
    """Normalize an image or stack to ``(n, C, H, W)``.

    Accepts ``(H, W)``, ``(n, H, W)`` or ``(n, C, H, W)``; returns the batch
    and the original rank so results can be shaped back.
    """
    arr = check_array(X, name, ndim=(2, 3, 4))
    rank = arr.ndim
    if rank == 2:
        arr = arr[None, None]
    elif rank == 3:
        arr = arr[:, None]
    return arr, rank


def restore_rank(Y, rank):
    if rank == 2:
        return Y[0, 0]
    if rank == 3:
        return Y[:, 0]
    return Y


def check_scalar(value, name, low=None, high=None, low_open=False, high_open=False, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite")
    if low is not None and (value <= low if low_open else value < low):
        raise ValueError(f"{name}={value} is below the allowed range")
    if high is not None and (value >= high if high_open else value > high):
        raise ValueError(f"{name}={value} is above the allowed range")
    return value
