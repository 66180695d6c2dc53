"""Phantom label disambiguation: prototypes, phantom targets, gating, SAT.

Class index 0 is the positive class, 1 the negative class. All state objects
are small mutable containers owned by the training loop; the update functions
mutate in place and also return the object for chaining.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np

from .numerics import l2_normalize

logger = logging.getLogger(__name__)

POSITIVE = np.array([1.0, 0.0])
NEGATIVE = np.array([0.0, 1.0])


def _check_momentum(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class Prototypes:
    mu: np.ndarray  # (2, m), unit rows
    alpha: float = 0.99

    def __post_init__(self):
        _check_momentum("alpha", self.alpha)
        self.mu = np.asarray(self.mu, dtype=np.float64)

    @classmethod
    def random(cls, dim, rng, alpha=0.99):
        mu = rng.standard_normal((2, dim))
        return cls(np.stack([l2_normalize(m) for m in mu]), alpha)


def update_prototype(protos, q_tilde, predicted_class):
    c = int(predicted_class)
    blended = protos.alpha * protos.mu[c] + (1.0 - protos.alpha) * np.asarray(q_tilde)
    norm = np.linalg.norm(blended)
    if norm == 0.0:
        logger.info("antipodal prototype update for class %d skipped", c)
        return protos
    protos.mu[c] = blended / norm
    return protos


def update_prototypes_batch(protos, Q_tilde, predicted):
    """Apply :func:`update_prototype` sample by sample, in batch order."""
    for q_t, c in zip(Q_tilde, predicted):
        update_prototype(protos, q_t, c)
    return protos


def prototype_vote(q_tilde, protos):
    """One-hot of the nearest prototype; ties go to the positive class."""
    scores = protos.mu @ np.asarray(q_tilde)
    r = np.zeros(2)
    r[int(np.argmax(scores))] = 1.0
    return r


@dataclass
class PhantomState:
    """Accumulated soft targets ``s'`` for the unlabeled samples, keyed by row."""
    s_prime: np.ndarray  # (n, 2)
    beta: float = 0.99

    def __post_init__(self):
        _check_momentum("beta", self.beta)
        self.s_prime = np.asarray(self.s_prime, dtype=np.float64)

    @classmethod
    def initial(cls, n, beta=0.99):
        return cls(np.tile(NEGATIVE, (n, 1)), beta)


def phantom_update(state, idx, q_tilde, protos):
    """Vote with the prototypes and blend the vote into ``s'[idx]``."""
    r = prototype_vote(q_tilde, protos)
    state.s_prime[idx] = state.beta * state.s_prime[idx] + (1.0 - state.beta) * r
    return r, state.s_prime[idx].copy()


def phantom_update_batch(state, idx, Q_tilde, protos):
    scores = Q_tilde @ protos.mu.T
    votes = np.zeros((len(idx), 2))
    votes[np.arange(len(idx)), np.argmax(scores, axis=1)] = 1.0
    state.s_prime[idx] = state.beta * state.s_prime[idx] + (1.0 - state.beta) * votes
    return votes


def gate(s_prime, f_neg, tau):
    """Hard negative when the negative-class confidence clears ``tau``, else ``s'``.

    ``s'`` itself is never touched, so a later release restores it intact.
    """
    return NEGATIVE.copy() if f_neg >= tau else np.array(s_prime, dtype=np.float64)


@dataclass
class ThresholdState:
    tau_tilde: float = 0.5
    rho_tilde: np.ndarray = None
    gamma: float = 0.99

    def __post_init__(self):
        _check_momentum("gamma", self.gamma)
        if self.rho_tilde is None:
            self.rho_tilde = np.array([0.5, 0.5])
        self.rho_tilde = np.asarray(self.rho_tilde, dtype=np.float64)


def sat_update(state, batch_probs):
    P = np.asarray(batch_probs, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("sat_update needs a non-empty batch of probabilities")
    g = state.gamma
    state.tau_tilde = g * state.tau_tilde + (1.0 - g) * float(P.max(axis=1).mean())
    state.rho_tilde = g * state.rho_tilde + (1.0 - g) * P.mean(axis=0)
    return state


def final_threshold(state):
    rho = state.rho_tilde
    return float(rho[1] / max(rho[0], rho[1]) * state.tau_tilde)


def emit_targets(observed_p, s_prime, f_neg, tau, warm_up=False):
    """Pseudo targets for a batch.

    Args:
        observed_p: (B,) bool, labeled positives.
        s_prime: (B, 2) phantom targets for the same rows (ignored for positives).
        f_neg: (B,) negative-class probabilities.
        tau: final threshold.
        warm_up: emit the initial targets regardless of the state.
    """
    observed_p = np.asarray(observed_p, dtype=bool)
    out = np.tile(NEGATIVE, (observed_p.size, 1))
    if not warm_up:
        released = np.asarray(f_neg) < tau
        out[released] = np.asarray(s_prime)[released]
    out[observed_p] = POSITIVE
    return out


def export_state(path, protos, sat, phantom, epoch=None):
    """Write prototypes, SAT statistics and every ``s'`` as one JSON document."""
    doc = {
        "epoch": epoch,
        "prototypes": protos.mu.tolist(),
        "tau_tilde": float(sat.tau_tilde),
        "rho_tilde": sat.rho_tilde.tolist(),
        "tau": final_threshold(sat),
        "s_prime": phantom.s_prime.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path
