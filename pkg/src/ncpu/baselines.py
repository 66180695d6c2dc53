"""CE (unlabeled-as-negative), uPU and nnPU risks, optionally plus NoiSNCL.

The surrogate loss is cross-entropy on the two-way softmax:
``l(f, +) = -log f_0`` and ``l(f, -) = -log f_1``. The risk decomposition is

    R = pi_p E_P[l(f, +)] + (E_U[l(f, -)] - pi_p E_P[l(f, -)])

and nnPU clamps the bracketed part at zero.
"""
from dataclasses import dataclass

import numpy as np

from .losses import representation_term
from .numerics import clamp_prob, softmax

KINDS = ("CE", "uPU", "nnPU")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "nnPU"
    pi_p: float = None
    with_noisncl: bool = False
    w_r: float = 50.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        needs_prior = self.kind in ("uPU", "nnPU")
        if needs_prior and (self.pi_p is None or not 0.0 <= self.pi_p < 1.0):
            raise ValueError(f"{self.kind} needs a class prior pi_p in [0, 1)")
        if self.w_r < 0:
            raise ValueError("w_r must be non-negative")


def _split(probs, observed_p, require_both):
    f = clamp_prob(np.asarray(probs, dtype=np.float64))
    observed_p = np.asarray(observed_p, dtype=bool)
    if require_both and (observed_p.all() or not observed_p.any()):
        raise ValueError("risk estimation needs both labeled and unlabeled samples in the batch")
    return -np.log(f), observed_p


def ce_objective(probs, observed_p):
    nll, observed_p = _split(probs, observed_p, False)
    if nll.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.where(observed_p, nll[:, 0], nll[:, 1])))


def risk_terms(probs, observed_p, pi_p):
    """``(pi_p R_P+, bracket)`` with ``bracket = R_U- - pi_p R_P-``."""
    nll, observed_p = _split(probs, observed_p, True)
    r_p_pos = nll[observed_p, 0].mean()
    r_p_neg = nll[observed_p, 1].mean()
    r_u_neg = nll[~observed_p, 1].mean()
    return float(pi_p * r_p_pos), float(r_u_neg - pi_p * r_p_neg)


def upu_objective(probs, observed_p, pi_p):
    pos, bracket = risk_terms(probs, observed_p, pi_p)
    return pos + bracket


def nnpu_objective(probs, observed_p, pi_p):
    pos, bracket = risk_terms(probs, observed_p, pi_p)
    return pos + max(0.0, bracket)


def objective(kind, logits, observed_p, pi_p=None):
    """Baseline risk and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    observed_p = np.asarray(observed_p, dtype=bool)
    f = softmax(logits)
    n = len(f)
    # rows of d(-log f_c)/dz for c = 0 and c = 1
    d_pos = f - np.array([1.0, 0.0])
    d_neg = f - np.array([0.0, 1.0])
    if kind == "CE":
        value = ce_objective(f, observed_p)
        g = np.where(observed_p[:, None], d_pos, d_neg) / n
        return value, g
    pos, bracket = risk_terms(f, observed_p, pi_p)
    n_p, n_u = observed_p.sum(), (~observed_p).sum()
    g = np.zeros_like(logits)
    g[observed_p] += pi_p * d_pos[observed_p] / n_p
    active = kind == "uPU" or bracket >= 0.0
    if active:
        g[~observed_p] += d_neg[~observed_p] / n_u
        g[observed_p] -= pi_p * d_neg[observed_p] / n_p
    value = pos + (bracket if active else 0.0)
    return value, g


def combined_objective(baseline_value, q, k, pair_mask, w_r):
    """Baseline value plus ``w_r`` times the mean NoiSNCL over the pair sets."""
    if w_r == 0:
        return float(baseline_value)
    rep, _ = representation_term(q, k, pair_mask, "noisncl")
    return float(baseline_value + w_r * rep)
