"""Input validation helpers shared across the package."""

import numbers

import numpy as np


def check_array(x, ndim=None, shape=None, name="array", dtype=np.float64, finite=True):
    """Convert ``x`` to a float ndarray and check its rank and shape.

    ``shape`` may contain ``None`` entries as wildcards.
    """
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None:
        if arr.ndim != len(shape) or any(
            s is not None and s != a for s, a in zip(shape, arr.shape)
        ):
            raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_fraction(f, name="f"):
    """Saturate a clip fraction into [0, 1]."""
    if not isinstance(f, numbers.Real) or np.isnan(f):
        raise ValueError(f"{name} must be a real number, got {f!r}")
    return float(min(1.0, max(0.0, f)))


def check_positive_int(n, name, minimum=1):
    if isinstance(n, bool) or not isinstance(n, numbers.Integral) or n < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {n!r}")
    return int(n)


def check_nonnegative(x, name):
    if not isinstance(x, numbers.Real) or not x >= 0:
        raise ValueError(f"{name} must be >= 0, got {x!r}")
    return float(x)


def check_rotation(c2w, tol=1e-6, name="c2w"):
    """Check that the upper-left 3x3 block of a pose is orthonormal."""
    c2w = check_array(c2w, shape=(4, 4), name=name)
    rot = c2w[:3, :3]
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"{name} rotation block is not orthonormal (error {err:.3g} > {tol:g})")
    return c2w
