"""Training losses and their analytic gradients.

Every ``*_loss`` function returns the scalar; the matching ``*_grad``
returns ``(value, grads)`` with ``grads`` keyed like the inputs.
"""

import numpy as np


def mse_loss(pred, target):
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def _tv_factor(arr):
    """Per-component mean squared neighbour difference, summed over components and axes."""
    value = 0.0
    grad = np.zeros_like(arr)
    for axis in range(1, arr.ndim):
        n = arr.shape[axis]
        if n < 2:
            continue
        diff = np.diff(arr, axis=axis)
        count = diff[0].size
        value += float(np.sum(diff ** 2)) / count
        g = 2.0 * diff / count
        hi = [slice(None)] * arr.ndim
        lo = [slice(None)] * arr.ndim
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        grad[tuple(hi)] += g
        grad[tuple(lo)] -= g
    return value, grad


def tv_loss(field, matrix_scale=1.0, vector_scale=1.0):
    return tv_grad(field, matrix_scale, vector_scale)[0]


def tv_grad(field, matrix_scale=1.0, vector_scale=1.0):
    """Total variation over every density and appearance factor.

    Matrix factors are weighted by ``matrix_scale`` and vector factors by
    ``vector_scale``; with both at 1 this is the plain sum over factors.
    """
    value, grads = 0.0, {}
    for name in field.factor_names():
        arr = field.params[name]
        scale = matrix_scale if arr.ndim == 3 else vector_scale
        v, g = _tv_factor(arr)
        value += scale * v
        grads[name] = scale * g
    return value, grads


def l1_loss(field):
    return l1_grad(field)[0]


def l1_grad(field):
    """Mean absolute value over all density factor entries."""
    names = field.factor_names("density")
    total = sum(field.params[n].size for n in names)
    value = sum(float(np.abs(field.params[n]).sum()) for n in names) / total
    grads = {n: np.sign(field.params[n]) / total for n in names}
    return value, grads


def occlusion_reg(sigma, occ_bins):
    return occlusion_grad(sigma, occ_bins)[0]


def occlusion_grad(sigma, occ_bins):
    """Mean density over the first ``occ_bins`` samples of every ray."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if occ_bins > sigma.shape[1]:
        raise ValueError(f"occ_bins={occ_bins} exceeds {sigma.shape[1]} samples per ray")
    if occ_bins <= 0:
        return 0.0, np.zeros_like(sigma)
    value = float(sigma[:, :occ_bins].mean())
    grad = np.zeros_like(sigma)
    grad[:, :occ_bins] = 1.0 / (sigma.shape[0] * occ_bins)
    return value, grad


def distance_scale(t, near_scale):
    """Per-sample gradient multiplier ``min(1, (t / near_scale)^2)``."""
    return np.minimum(1.0, (np.asarray(t, dtype=np.float64) / near_scale) ** 2)


def scale_grads_by_distance(grads, t, near_scale, enabled=True):
    """Damp per-sample gradient contributions close to the camera.

    ``grads`` has the per-ray sample layout ``(B, S)`` or ``(B, S, C)``.
    """
    if not enabled:
        return grads
    scale = distance_scale(t, near_scale)
    grads = np.asarray(grads)
    if grads.ndim == scale.ndim + 1:
        scale = scale[..., None]
    return grads * scale
