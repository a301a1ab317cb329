"""Image quality metrics on unit-peak images.

SSIM here is the single-window (whole image) form, which differs from the
usual sliding-window SSIM of common imaging libraries.
"""

from dataclasses import dataclass

import numpy as np

from .io import write_csv

SSIM_C1 = 1e-4
SSIM_C2 = 9e-4


@dataclass(frozen=True)
class MetricPair:
    psnr: float
    ssim: float


def psnr(x, ref):
    """``20 log10(sqrt(K) / ||x - ref||)`` with peak value 1; ``inf`` for identical images."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    err = np.linalg.norm((x - ref).ravel())
    if err == 0.0:
        return float("inf")
    return float(20.0 * np.log10(np.sqrt(x.size) / err))


def ssim(x, ref, c1=SSIM_C1, c2=SSIM_C2):
    x = np.asarray(x, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    mx, mr = x.mean(), ref.mean()
    vx, vr = x.var(), ref.var()
    cov = np.mean((x - mx) * (ref - mr))
    return float((2 * mx * mr + c1) * (2 * cov + c2) / ((mx**2 + mr**2 + c1) * (vx + vr + c2)))


def metrics(x, ref):
    return MetricPair(psnr(x, ref), ssim(x, ref))


def write_table(path, cells, methods, kernels):
    """Mean-PSNR table: rows are methods, columns kernels; ``cells[(method, kernel)]``."""
    rows = [[m] + [float(cells.get((m, k), float("nan"))) for k in kernels] for m in methods]
    write_csv(path, ["method"] + list(kernels), rows)
