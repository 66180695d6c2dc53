"""Classification and non-contrastive representation losses.

Per-pair functions take raw (un-normalized) embeddings ``q`` (online) and
``k`` (target). Gradients are always with respect to ``q``; the target side is
a constant. :func:`composite_loss` is the batched objective used for training
and returns gradients with respect to the classifier logits and the online
embeddings so :mod:`ncpu.model` can backpropagate them.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .numerics import PROB_EPS, as_vec, clamp_prob, l2_normalize, l2_normalize_rows, softmax

logger = logging.getLogger(__name__)

RADICAND_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_r: float = 50.0
    w_ent: float = 0.0

    def __post_init__(self):
        for name in ("w_r", "w_ent"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {val}")


@dataclass(frozen=True)
class LossBreakdown:
    ldce_p: float
    ldce_u: float
    rep: float
    ent: float
    total: float

    def as_dict(self):
        return {"ldce_p": self.ldce_p, "ldce_u": self.ldce_u, "rep": self.rep,
                "ent": self.ent, "total": self.total}


def ldce(f, s):
    """Cross-entropy ``-s . log f`` with ``f`` clamped away from 0 and 1."""
    f = clamp_prob(np.asarray(f, dtype=np.float64))
    s = np.asarray(s, dtype=np.float64)
    return float(-np.dot(s, np.log(f)))


def _unit_pair(q, k):
    q = as_vec(q)
    k = as_vec(k)
    if q.shape != k.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {k.shape}")
    q_t = l2_normalize(q)
    k_t = l2_normalize(k)
    return q, q_t, k_t, float(np.clip(np.dot(q_t, k_t), -1.0, 1.0))


def self_ncl(q, k):
    _, _, _, c = _unit_pair(q, k)
    return 2.0 * (1.0 - c)


def sup_ncl(q, k, same_label):
    _, _, _, c = _unit_pair(q, k)
    return 2.0 * (1.0 - c) if same_label else 0.0


def noisncl(q, k, same_label):
    _, _, _, c = _unit_pair(q, k)
    return 2.0 * np.sqrt(max(1.0 - c, 0.0)) if same_label else 0.0


def _tangent(q, q_t, k_t):
    # (I - q~ q~^T) k~ / ||q||
    return (k_t - q_t * np.dot(q_t, k_t)) / np.linalg.norm(q)


def grad_sup_ncl(q, k):
    q, q_t, k_t, _ = _unit_pair(q, k)
    return -2.0 * _tangent(q, q_t, k_t)


def grad_noisncl(q, k):
    q, q_t, k_t, c = _unit_pair(q, k)
    return -_tangent(q, q_t, k_t) / np.sqrt(max(1.0 - c, RADICAND_EPS))


def grad_mag_sq_sup(q, k):
    q, _, _, c = _unit_pair(q, k)
    return 4.0 / np.dot(q, q) * (1.0 - c * c)


def grad_mag_sq_noisncl(q, k):
    """Closed-form squared gradient norm of :func:`noisncl`.

    Undefined when the pair is exactly aligned (the gradient vector is 0/0
    there even though the limit of this formula is ``2 / ||q||^2``).
    """
    q, _, _, c = _unit_pair(q, k)
    if c >= 1.0:
        raise ValueError("gradient of noisncl is undefined for perfectly aligned pairs")
    return (1.0 + c) / np.dot(q, q)


def entropy_reg(batch_probs):
    """Negative entropy of the batch-mean prediction (minimum at uniform)."""
    P = np.asarray(batch_probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("entropy_reg needs a non-empty batch of probability vectors")
    p_bar = clamp_prob(P.mean(axis=0))
    return float(np.sum(p_bar * np.log(p_bar)))


def pair_loss_matrix(q, k, kind="noisncl"):
    """All-pairs representation loss between rows of ``q`` and ``k``.

    Returns ``(L, dL/dC, q_tilde, q_norms, k_tilde)`` where ``C = q~ k~^T``.
    """
    q_t, q_norm = l2_normalize_rows(q)
    k_t, _ = l2_normalize_rows(k)
    C = q_t @ k_t.T
    if kind == "noisncl":
        L = 2.0 * np.sqrt(np.maximum(1.0 - C, 0.0))
        dC = -1.0 / np.sqrt(np.maximum(1.0 - C, RADICAND_EPS))
    elif kind == "sup":
        L = 2.0 * (1.0 - C)
        dC = np.full_like(C, -2.0)
    else:
        raise ValueError(f"unknown representation loss {kind!r}")
    return L, dC, q_t, q_norm, k_t


def representation_term(q, k, pair_mask, kind="noisncl"):
    """Mean over anchors of the mean pair loss over each anchor's pair set.

    Returns ``(value, d value / d q)``.
    """
    M = np.asarray(pair_mask, dtype=bool)
    counts = M.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("every anchor needs a non-empty pair set")
    n = M.shape[0]
    L, dC, q_t, q_norm, k_t = pair_loss_matrix(q, k, kind)
    W = M / counts[:, None] / n
    value = float(np.sum(W * L))
    G = W * dC
    g_qt = G @ k_t
    # project out the radial component and undo the normalization
    g_q = (g_qt - q_t * np.einsum("ij,ij->i", g_qt, q_t)[:, None]) / q_norm[:, None]
    return value, g_q


def composite_loss(logits, targets, observed_p, q=None, k=None, pair_mask=None,
                   weights=LossWeights(), rep_kind="noisncl"):
    """Batched training objective.

    Args:
        logits: (B, 2) classifier logits.
        targets: (B, 2) pseudo targets (positives are (1, 0)).
        observed_p: (B,) bool, True for labeled positives.
        q, k: (B, m) online / target embeddings. Only needed when ``w_r > 0``.
        pair_mask: (B, B) bool pair sets, row i is the set for anchor i.

    Returns:
        ``(LossBreakdown, d total / d logits, d total / d q)``; the last is
        ``None`` when the representation term is inactive.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    observed_p = np.asarray(observed_p, dtype=bool)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    f = softmax(logits)
    log_f = np.log(clamp_prob(f))
    per_sample = -np.sum(targets * log_f, axis=1)
    g_logits = np.zeros_like(logits)
    dce = f * targets.sum(axis=1, keepdims=True) - targets

    parts = {}
    for name, mask in (("ldce_p", observed_p), ("ldce_u", ~observed_p)):
        m = int(mask.sum())
        if m == 0:
            logger.info("batch has no %s members; %s term set to 0", name[-1].upper(), name)
            parts[name] = 0.0
            continue
        parts[name] = float(per_sample[mask].sum() / m)
        g_logits[mask] += dce[mask] / m

    rep, g_q = 0.0, None
    if weights.w_r > 0:
        rep, g_q = representation_term(q, k, pair_mask, rep_kind)
        g_q = weights.w_r * g_q

    ent = 0.0
    if weights.w_ent > 0:
        p_bar = f.mean(axis=0)
        p_c = np.clip(p_bar, PROB_EPS, 1.0 - PROB_EPS)
        ent = float(np.sum(p_c * np.log(p_c)))
        g_pbar = (np.log(p_c) + 1.0) * (p_bar == p_c)
        g_f = np.broadcast_to(g_pbar / n, f.shape)
        g_logits += weights.w_ent * f * (g_f - np.sum(f * g_f, axis=1, keepdims=True))

    total = parts["ldce_p"] + parts["ldce_u"] + weights.w_r * rep + weights.w_ent * ent
    bd = LossBreakdown(parts["ldce_p"], parts["ldce_u"], rep, ent, total)
    return bd, g_logits, g_q
