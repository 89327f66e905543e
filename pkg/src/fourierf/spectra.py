"""Fourier-domain low-pass projection of factor vectors and matrices.

Conventions:

* Forward transforms are unnormalised, inverse transforms carry ``1/n``.
* 1D factors use the real-input layout with ``d // 2 + 1`` bins ordered by
  increasing frequency, so "keep the first bins" means "keep low frequencies".
* 2D masks are discs in signed-frequency coordinates, which makes them
  exactly Hermitian-symmetric: clipped real matrices stay real.

All transforms act on the trailing axis (1D) or trailing two axes (2D), so a
stack of rank components ``(R, d)`` or ``(R, d1, d2)`` is clipped in one call.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np

from ._validation import check_fraction, check_positive_int


@dataclass(frozen=True)
class ClipSchedule:
    """Linear frequency budget ``f_t = min(1, f0 + t * delta)``.

    ``delta`` may be ``math.inf`` to saturate at the first iteration.
    """

    f0: float
    delta: float
    n_iters: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "f0", check_fraction(self.f0, "f0"))
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta!r}")
        check_positive_int(self.n_iters, "n_iters")

    @classmethod
    def reaching_one_at(cls, f0, n_iters):
        """Schedule whose budget first hits 1 exactly at iteration ``n_iters``."""
        return cls(f0, max((1.0 - f0) / n_iters, np.finfo(float).tiny), n_iters)

    def __call__(self, t):
        return schedule_value(self, t)


def linear_delta(f0, n_iters):
    """Increment that reaches a full budget after ``n_iters`` steps."""
    return (1.0 - f0) / n_iters


def schedule_value(schedule, t):
    """Clip fraction at iteration ``t``.

    Values within 1e-12 of 1 snap to exactly 1 so accumulated rounding in
    ``f0 + t * delta`` cannot leave the budget a hair short of full.
    """
    if t < 0:
        raise ValueError(f"iteration index must be >= 0, got {t}")
    if t == 0:
        return schedule.f0
    f = schedule.f0 + t * schedule.delta
    if f >= 1.0 - 1e-12:
        return 1.0
    return f


# -- 1D -------------------------------------------------------------------

def dft_1d(v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise ValueError("dft_1d needs length >= 2")
    return np.fft.rfft(v, axis=-1)


def idft_1d(spectrum, n):
    return np.fft.irfft(spectrum, n=n, axis=-1)


@lru_cache(maxsize=4096)
def _mask_1d_cached(f, d_f):
    t = d_f * f
    full = math.floor(t)
    mask = np.zeros(d_f)
    mask[:min(full, d_f)] = 1.0
    if full < d_f:
        mask[full] = t - full
    mask.flags.writeable = False
    return mask


def mask_1d(f, d_f):
    """Keep bins below ``d_f * f``, weight the boundary bin by the fractional part."""
    return _mask_1d_cached(check_fraction(f), check_positive_int(d_f, "d_f"))


def clip_1d(v, f):
    """Low-pass ``v`` along its last axis, keeping a fraction ``f`` of the bins."""
    v = np.asarray(v, dtype=np.float64)
    f = check_fraction(f)
    n = v.shape[-1]
    spec = dft_1d(v)
    return idft_1d(spec * mask_1d(f, spec.shape[-1]), n)


# -- 2D -------------------------------------------------------------------

def signed_frequency(d):
    """Signed frequency index of each unshifted DFT bin, in ``[-d//2, (d-1)//2]``."""
    k = np.arange(d)
    return (k + d // 2) % d - d // 2


@lru_cache(maxsize=1024)
def _mask_2d_cached(f, d1, d2):
    s1 = signed_frequency(d1)
    s2 = signed_frequency(d2)
    norm2 = s1[:, None] ** 2 + s2[None, :] ** 2
    # squared radius (f/2)^2 * 2 * max(d1, d2)^2
    r2 = f * f * max(d1, d2) ** 2 / 2.0
    mask = norm2 <= r2
    # f is read as the decimal it prints as, so 0.6 keeps the bins at radius^2 = 18
    # for a 10-wide factor; bins that close to the boundary are decided exactly
    near = np.abs(norm2 - r2) <= 1e-9 * max(r2, 1.0)
    if near.any():
        exact_r2 = Fraction(repr(f)) ** 2 * max(d1, d2) ** 2 / 2
        for idx in zip(*np.nonzero(near)):
            mask[idx] = int(norm2[idx]) <= exact_r2
    mask = mask.astype(np.float64)
    mask.flags.writeable = False
    return mask


def mask_2d(f, d1, d2):
    """Binary disc mask over the full ``d1 x d2`` unshifted spectrum."""
    d1 = check_positive_int(d1, "d1", minimum=2)
    d2 = check_positive_int(d2, "d2", minimum=2)
    return _mask_2d_cached(check_fraction(f), d1, d2)


def dft_2d(w):
    return np.fft.fft2(np.asarray(w, dtype=np.float64), axes=(-2, -1))


def idft_2d(spectrum):
    return np.fft.ifft2(spectrum, axes=(-2, -1))


def clip_2d(w, f):
    """Low-pass ``w`` over its last two axes with a disc of relative radius ``f``."""
    w = np.asarray(w, dtype=np.float64)
    f = check_fraction(f)
    d1, d2 = w.shape[-2:]
    mask = mask_2d(f, d1, d2)[:, : d2 // 2 + 1]
    # The disc is Hermitian-symmetric, so the half spectrum carries everything.
    spec = np.fft.rfft2(w, axes=(-2, -1))
    return np.fft.irfft2(spec * mask, s=(d1, d2), axes=(-2, -1))


# -- fields ---------------------------------------------------------------

def clip_array(arr, f):
    """Clip a stacked factor: ``(R, d)`` as vectors, ``(R, d1, d2)`` as matrices."""
    if arr.ndim == 2:
        return clip_1d(arr, f)
    if arr.ndim == 3:
        return clip_2d(arr, f)
    raise ValueError(f"cannot clip factor of shape {arr.shape}")


def clip_field(field, f):
    """Return a copy of ``field`` with every spatial factor low-passed at ``f``.

    Density and appearance factors are clipped alike; the appearance basis is
    not spatial and passes through unchanged.
    """
    out = field.copy()
    clip_field_(out, f)
    return out


def clip_field_(field, f):
    """In-place variant of :func:`clip_field`."""
    f = check_fraction(f)
    for name in field.factor_names():
        field.params[name] = clip_array(field.params[name], f)
    return field


def retained_energy_ratio(arr, f):
    """Fraction of L2 energy surviving the clip, per rank component."""
    arr = np.asarray(arr, dtype=np.float64)
    clipped = clip_array(arr, f)
    axes = tuple(range(1, arr.ndim))
    total = np.sum(arr ** 2, axis=axes)
    kept = np.sum(clipped ** 2, axis=axes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, kept / np.where(total > 0, total, 1.0), 1.0)
