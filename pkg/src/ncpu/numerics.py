"""Small vector primitives and a central-difference gradient oracle.

Everything here works on float64 numpy arrays. Batched variants (``*_rows``)
operate on the last axis of a 2-D array and are what the training loop uses;
the scalar forms exist for tests and for the per-pair formulas in
:mod:`ncpu.losses`.
"""
import numpy as np

PROB_EPS = 1e-12
DEFAULT_FD_STEP = 1e-6


class DegenerateVectorError(ValueError):
    """Raised when a zero vector is passed where a direction is required."""


def as_vec(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def l2_normalize(v):
    v = as_vec(v)
    norm = np.sqrt(np.dot(v, v))
    if norm == 0.0:
        raise DegenerateVectorError("cannot normalize a zero vector")
    return v / norm


def l2_normalize_rows(V):
    """Row-wise normalization; returns ``(V / ||V||, ||V||)``."""
    V = np.asarray(V, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    if np.any(norms == 0.0):
        raise DegenerateVectorError(
            f"zero embedding at rows {np.flatnonzero(norms == 0.0).tolist()}"
        )
    return V / norms[:, None], norms


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def cosine(u, v):
    u = l2_normalize(u)
    v = l2_normalize(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def finite_diff_grad(field, at, step=DEFAULT_FD_STEP):
    """Central-difference gradient of a scalar ``field`` at ``at``.

    ``at`` may have any shape; the result has the same shape. The field is
    called on a perturbed copy, never on ``at`` itself.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    theta = np.array(at, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(field(theta))
        flat[i] = orig - step
        f_minus = float(field(theta))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite field value at coordinate {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Max-norm relative error, with ``floor`` guarding near-zero gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)
