"""Image quality and floater metrics."""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np
from scipy.signal import fftconvolve

from .data import UNIT_AABB

LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``inf`` if identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def to_luma(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image[..., :3] @ LUMA
    return image


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Single-scale SSIM on luma, averaged over valid window positions."""
    x, y = to_luma(a), to_luma(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise ValueError(f"images must be at least {window}x{window} for SSIM")
    w = _gaussian_window(window, sigma)

    def filt(img):
        return fftconvolve(img, w, mode="valid")

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def grid_points(n, aabb=UNIT_AABB):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(*aabb)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def floater_score(field, spec, sigma_min=1.0, n=64):
    """Fraction of ``n^3`` lattice points that are dense but lie outside every primitive.

    The lattice spans the unit box ``[-1, 1]^3``.
    """
    pts = grid_points(n)
    sigma = field.sigma_world(pts)
    outside = np.ones(len(pts), dtype=bool)
    for prim in spec.primitives:
        outside &= ~prim.contains(pts)
    return float(np.mean((sigma > sigma_min) & outside))


@dataclass
class MetricReport:
    names: list
    psnr: list
    ssim: list
    floater: float = None
    extra: dict = dc_field(default_factory=dict)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_csv(self):
        lines = ["view,psnr,ssim"]
        lines += [f"{n},{p:.6f},{s:.6f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        return "\n".join(lines) + "\n"

    def summary(self):
        text = (f"views: {len(self.names)}\nmean PSNR: {self.mean_psnr:.4f} dB\n"
                f"mean SSIM: {self.mean_ssim:.4f}\n")
        if self.floater is not None:
            text += f"floater score: {self.floater:.6f}\n"
        return text


def evaluate_images(renders, targets, names=None):
    names = names or [f"view_{n}" for n in range(len(renders))]
    return MetricReport(list(names), [psnr(r, t) for r, t in zip(renders, targets)],
                        [ssim(r, t) for r, t in zip(renders, targets)])
