"""Small input-validation helpers shared across the package."""

import numpy as np


def as_float_array(x, name, ndim=None):
    """Coerce to a float64 ndarray and reject NaN/inf."""
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def require(condition, message):
    if not condition:
        raise ValueError(message)


def check_workspace(x, y, z, tilt_y, z_max, r_work, tilt_max=15.0):
    """Raise if any pose falls outside the cylindrical workspace."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    tilt_y = np.asarray(tilt_y, float)
    # small slack absorbs float round-off from interpolation
    eps = 1e-9
    if np.any(z < -eps) or np.any(z > z_max + eps):
        raise ValueError(f"compression depth outside [0, {z_max}] mm")
    if np.any(np.hypot(x, y) > r_work + eps):
        raise ValueError(f"lateral position outside working radius {r_work} mm")
    if np.any(np.abs(tilt_y) > tilt_max + eps):
        raise ValueError(f"tilt outside [-{tilt_max}, {tilt_max}] degrees")
