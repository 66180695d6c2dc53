"""Epoch loop, evaluation metrics and EM-view diagnostics.

:class:`TrainState` owns every piece of mutable training state. Estimators in
:mod:`ncpu.estimator` build one and call :func:`train_epoch` repeatedly; the
experiment runner in :mod:`ncpu.experiment` adds data generation and file
output on top.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import baselines, model, pld
from .losses import LossBreakdown, LossWeights, composite_loss, representation_term
from .numerics import l2_normalize_rows, softmax
from .pudata import AugConfig, augment, pair_sets, pairing_labels

logger = logging.getLogger(__name__)

METHODS = ("NcPU", "CE", "uPU", "nnPU", "CE+rep", "uPU+rep", "nnPU+rep")

# named random sub-streams derived from the run seed
STREAM_DATA, STREAM_INIT, STREAM_AUG, STREAM_ORDER, STREAM_PROTO = range(5)


def substream(seed, stream, *extra):
    return np.random.default_rng([int(seed), stream, *extra])


@dataclass
class TrainSettings:
    method: str = "NcPU"
    epochs: int = 200
    warm_up_epochs: int = 10
    batch_size: int = 64
    lr: float = 0.001
    sgd_momentum: float = 0.9
    lr_schedule: str = "constant"
    alpha: float = 0.99
    beta: float = 0.99
    gamma: float = 0.99
    eta: float = 0.99
    w_r: float = 50.0
    w_ent: float = 5.0
    pair_mode: str = "label"
    sim_threshold: float = 0.2
    pi_p: float = None
    rep_kind: str = "noisncl"

    @property
    def base_kind(self):
        return self.method.split("+")[0]

    @property
    def uses_rep(self):
        return self.method == "NcPU" or self.method.endswith("+rep")

    def validate(self):
        errors = []
        if self.method not in METHODS:
            errors.append(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("alpha", "beta", "gamma", "eta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errors.append(f"{name} must lie in [0, 1]")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.warm_up_epochs < 0:
            errors.append("warm_up_epochs must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if self.lr < 0:
            errors.append("lr must be >= 0")
        if not 0.0 <= self.sgd_momentum < 1.0:
            errors.append("sgd_momentum must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            errors.append("lr_schedule must be 'constant' or 'cosine'")
        if self.w_r < 0 or self.w_ent < 0:
            errors.append("w_r and w_ent must be >= 0")
        if self.rep_kind not in ("noisncl", "sup"):
            errors.append("rep_kind must be 'noisncl' or 'sup'")
        if self.pair_mode not in ("label", "similarity"):
            errors.append("pair_mode must be 'label' or 'similarity'")
        if self.base_kind in ("uPU", "nnPU") and (self.pi_p is None or not 0.0 <= self.pi_p < 1.0):
            errors.append(f"{self.base_kind} needs pi_p in [0, 1)")
        return errors


@dataclass
class TrainState:
    settings: TrainSettings
    pair: model.NetworkPair
    optimizer: model.SGD
    protos: pld.Prototypes
    phantom: pld.PhantomState
    sat: pld.ThresholdState
    X: np.ndarray
    observed_p: np.ndarray
    aug: AugConfig
    seed: int
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def tau(self):
        return pld.final_threshold(self.sat)

    def in_warm_up(self):
        return self.epoch < self.settings.warm_up_epochs

    def current_targets(self, probs):
        """Targets the next batch would emit for every sample, given ``probs``."""
        return pld.emit_targets(self.observed_p, self.phantom.s_prime, probs[:, 1],
                                self.tau, warm_up=self.in_warm_up())


def init_state(X, observed_p, settings, net_spec, aug, seed):
    errors = settings.validate()
    if errors:
        raise ValueError("invalid training settings: " + "; ".join(errors))
    pair = model.init(net_spec, int(substream(seed, STREAM_INIT).integers(2**31)), settings.eta)
    protos = pld.Prototypes.random(net_spec.predictor_dim, substream(seed, STREAM_PROTO),
                                   settings.alpha)
    return TrainState(
        settings=settings,
        pair=pair,
        optimizer=model.SGD(settings.lr, settings.sgd_momentum),
        protos=protos,
        phantom=pld.PhantomState.initial(len(X), settings.beta),
        sat=pld.ThresholdState(gamma=settings.gamma),
        X=np.asarray(X, dtype=np.float64),
        observed_p=np.asarray(observed_p, dtype=bool),
        aug=aug,
        seed=seed,
    )


def _learning_rate(settings, epoch):
    if settings.lr_schedule == "cosine" and settings.epochs > 0:
        return 0.5 * settings.lr * (1.0 + np.cos(np.pi * epoch / settings.epochs))
    return settings.lr


def _ncpu_step(state, idx, v, v_prime):
    s = state.settings
    pair = state.pair
    obs = state.observed_p[idx]
    cache = model.forward_train(pair, v)
    probs = softmax(cache.logits)
    y_tilde = np.argmax(probs, axis=1)
    q_t, _ = l2_normalize_rows(cache.q)

    pld.update_prototypes_batch(state.protos, q_t, y_tilde)
    model.momentum_update_target(pair)
    k = model.target_embed(pair, v_prime) if s.w_r > 0 else None

    pld.sat_update(state.sat, probs)
    tau = state.tau
    warm = state.in_warm_up()
    if not warm:
        u = ~obs
        pld.phantom_update_batch(state.phantom, idx[u], q_t[u], state.protos)
    targets = pld.emit_targets(obs, state.phantom.s_prime[idx], probs[:, 1], tau, warm_up=warm)

    mask = None
    if s.w_r > 0:
        f_neg = np.where(obs, 0.0, probs[:, 1])
        mask = pair_sets(pairing_labels(obs, probs), s.pair_mode, f_neg, s.sim_threshold)
    weights = LossWeights(s.w_r, s.w_ent)
    bd, g_logits, g_q = composite_loss(cache.logits, targets, obs, cache.q, k, mask,
                                       weights, s.rep_kind)
    if not np.isfinite(bd.total):
        raise model.NonFiniteError(f"non-finite loss at epoch {state.epoch}: {bd}")
    grads = model.backprop(pair, cache, g_logits, g_q)
    state.optimizer.step(pair, grads)
    return bd


def _baseline_step(state, idx, v, v_prime):
    s = state.settings
    pair = state.pair
    obs = state.observed_p[idx]
    if s.base_kind in ("uPU", "nnPU") and (obs.all() or not obs.any()):
        logger.info("skipping batch without both P and U members")
        return None
    cache = model.forward_train(pair, v)
    value, g_logits = baselines.objective(s.base_kind, cache.logits, obs, s.pi_p)
    rep, g_q = 0.0, None
    if s.uses_rep and s.w_r > 0:
        model.momentum_update_target(pair)
        k = model.target_embed(pair, v_prime)
        probs = softmax(cache.logits)
        f_neg = np.where(obs, 0.0, probs[:, 1])
        mask = pair_sets(pairing_labels(obs, probs), s.pair_mode, f_neg, s.sim_threshold)
        rep, g_q = representation_term(cache.q, k, mask, s.rep_kind)
        g_q = s.w_r * g_q
    total = value + s.w_r * rep if s.uses_rep else value
    if not np.isfinite(total):
        raise model.NonFiniteError(f"non-finite loss at epoch {state.epoch}")
    grads = model.backprop(pair, cache, g_logits, g_q)
    state.optimizer.step(pair, grads)
    return LossBreakdown(value, 0.0, rep, 0.0, total)


def train_epoch(state):
    """One pass over the training set; returns the epoch-mean loss breakdown."""
    s = state.settings
    state.optimizer.lr = _learning_rate(s, state.epoch)
    n = len(state.X)
    order = substream(state.seed, STREAM_ORDER, state.epoch).permutation(n)
    aug_rng = substream(state.seed, STREAM_AUG, state.epoch)
    step = _ncpu_step if s.method == "NcPU" else _baseline_step
    sums = np.zeros(5)
    n_batches = 0
    for start in range(0, n, s.batch_size):
        idx = order[start:start + s.batch_size]
        x = state.X[idx]
        v = augment(x, state.aug, aug_rng)
        v_prime = augment(x, state.aug, aug_rng)
        bd = step(state, idx, v, v_prime)
        if bd is None:
            continue
        sums += [bd.ldce_p, bd.ldce_u, bd.rep, bd.ent, bd.total]
        n_batches += 1
    state.epoch += 1
    mean = sums / max(n_batches, 1)
    bd = LossBreakdown(*map(float, mean))
    state.history.append(bd)
    return bd


@dataclass(frozen=True)
class MetricsReport:
    oa: float
    f1: float
    precision: float
    recall: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int

    def as_dict(self):
        return dict(self.__dict__)


def roc_auc(scores, is_positive):
    """Area under the ROC curve via average ranks (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(pred, truth, score_pos):
    """Metrics for the positive class (label 0); ``score_pos`` ranks positives high."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty evaluation set")
    tp = int(np.sum((pred == 0) & (truth == 0)))
    fp = int(np.sum((pred == 0) & (truth == 1)))
    tn = int(np.sum((pred == 1) & (truth == 1)))
    fn = int(np.sum((pred == 1) & (truth == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    oa = (tp + tn) / truth.size
    return MetricsReport(oa, f1, precision, recall, roc_auc(score_pos, truth == 0), tp, fp, tn, fn)


def evaluate(pair, X, truth):
    probs = model.classify(pair, np.atleast_2d(X))
    return classification_metrics(np.argmax(probs, axis=1), truth, probs[:, 0])


@dataclass(frozen=True)
class EmDiagnostics:
    l1: float
    l2: float
    rr_pairwise: float
    rr_clusterform: float
    rr_tilde: float
    norm_nu: tuple
    cluster_sizes: tuple
    nonneg_cosines: bool

    def as_dict(self):
        return {"l1": self.l1, "l2": self.l2, "rr_pairwise": self.rr_pairwise,
                "rr_clusterform": self.rr_clusterform, "rr_tilde": self.rr_tilde,
                "norm_nu_0": self.norm_nu[0], "norm_nu_1": self.norm_nu[1]}


def em_diagnostics(embeddings, labels):
    """Cluster-tightening quantities for unit embeddings split by predicted label.

    ``rr_pairwise`` averages the plain pair loss over every same-cluster pair
    (self included); ``rr_clusterform`` is the same quantity computed from the
    cluster means. ``l1``/``l2`` are the size-weighted mean squared / plain
    norms of those means.
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(Z)
    if n == 0:
        raise ValueError("no embeddings")
    rr_pair = rr_cluster = rr_tilde = l1 = l2 = 0.0
    norms, sizes = [], []
    nonneg = True
    for c in (0, 1):
        S = Z[labels == c]
        sizes.append(len(S))
        if len(S) == 0:
            logger.info("cluster %d is empty; it contributes 0", c)
            norms.append(0.0)
            continue
        G = S @ S.T
        nonneg &= bool(np.all(G >= 0.0))
        rr_pair += float(np.sum(2.0 * (1.0 - G)) / len(S))
        rr_tilde += float(np.sum(2.0 * np.sqrt(np.maximum(1.0 - G, 0.0))) / len(S))
        nu = S.mean(axis=0)
        rr_cluster += 2.0 * float(np.sum((S - nu) ** 2))
        nn = float(np.linalg.norm(nu))
        norms.append(nn)
        l1 += len(S) / n * nn * nn
        l2 += len(S) / n * nn
    return EmDiagnostics(l1, l2, rr_pair / n, rr_cluster / n, rr_tilde / n, tuple(norms),
                         tuple(sizes), nonneg)
