"""Central finite-difference gradient checks (float64)."""
import numpy as np

EPS = 1e-6


def rel_error(analytic, numeric):
    """Largest absolute deviation, relative to the scale of the numeric gradient."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(f, arr, eps=EPS, coords=None):
    """d f() / d arr by central differences, perturbing ``arr`` in place.

    ``coords`` restricts the check to a list of flat indices; other entries stay 0.
    """
    grad = np.zeros_like(arr, dtype=float)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad
