"""Full-model finite-difference gradient checks.

Every loss term is checked on its own and jointly. Term gradients are read off
by linearity in the loss weights (``term = loss(w) - loss(0)``), so no extra
backprop code path is involved.
"""
from dataclasses import dataclass

import numpy as np

from . import baselines, model
from .losses import LossWeights
from .numerics import finite_diff_grad, relative_error
from .pudata import pair_sets

MAX_PARAMS = 5000
THRESHOLD = 1e-5
TERMS = ("ldce", "rep", "ent", "joint", "CE", "uPU", "nnPU")


@dataclass(frozen=True)
class GradcheckReport:
    errors: dict  # term -> relative error over the online parameter vector
    n_params: int
    threshold: float = THRESHOLD

    @property
    def worst(self):
        return max(self.errors.values())

    @property
    def passed(self):
        return self.worst <= self.threshold


def small_problem(input_dim=3, hidden=(8, 8), embed_dim=5, batch=6, seed=0):
    """A tanh network with perturbed target weights and a fixed 6-sample batch."""
    rng = np.random.default_rng(seed)
    spec = model.NetworkSpec(input_dim, encoder_hidden=hidden, projector_dim=embed_dim,
                             predictor_dim=embed_dim, activation="tanh")
    pair = model.init(spec, seed, eta=0.5)
    for arr in pair.target_params().values():
        arr += 0.1 * rng.standard_normal(arr.shape)
    for arr in pair.online_params().values():
        arr += 0.1 * rng.standard_normal(arr.shape)
    view = rng.standard_normal((batch, input_dim))
    view_prime = rng.standard_normal((batch, input_dim))
    targets = rng.dirichlet([1.0, 1.0], batch)
    observed_p = np.zeros(batch, dtype=bool)
    observed_p[: max(1, batch // 3)] = True
    targets[observed_p] = [1.0, 0.0]
    labels = rng.integers(0, 2, batch)
    labels[observed_p] = 0
    return pair, dict(view=view, view_prime=view_prime, targets=targets,
                      observed_p=observed_p, pair_mask=pair_sets(labels))


def _composite(weights):
    def value_and_grads(pair, batch):
        return model.backward(pair, batch["view"], batch["view_prime"], batch["targets"],
                              batch["observed_p"], batch["pair_mask"], weights)
    return value_and_grads


def _term(w_r, w_ent):
    """Gradient of ``w_r * rep + w_ent * ent`` alone, by subtracting the LDCE-only run."""
    full, base = _composite(LossWeights(w_r, w_ent)), _composite(LossWeights(0.0, 0.0))

    def value_and_grads(pair, batch):
        bd1, g1 = full(pair, batch)
        _, g0 = base(pair, batch)
        # read the value from the breakdown, not as a difference of totals,
        # so the finite differences carry no cancellation noise
        return w_r * bd1.rep + w_ent * bd1.ent, {k: g1[k] - g0[k] for k in g1}
    return value_and_grads


def _baseline(kind, pi_p=0.3):
    def value_and_grads(pair, batch):
        cache = model.forward_train(pair, batch["view"])
        value, g_logits = baselines.objective(kind, cache.logits, batch["observed_p"], pi_p)
        return value, model.backprop(pair, cache, g_logits, None)
    return value_and_grads


def _value(fn):
    def scalar(pair, batch):
        out = fn(pair, batch)[0]
        return out if np.isscalar(out) else out.total
    return scalar


def check_term(pair, batch, fn, corrupt=False):
    """Relative error between analytic and central-difference gradients.

    The error is taken over the concatenated parameter vector, so a block
    the term does not touch (zero analytic gradient) is judged against the
    scale of the whole gradient rather than against round-off.
    """
    _, grads = fn(pair, batch)
    value = _value(fn)
    analytic_all, numeric_all = [], []
    for name, arr in pair.online_params().items():
        analytic = grads[name].copy()
        if corrupt:
            analytic = analytic * 1.01 + 1e-3
        original = arr.copy()

        def field(theta):
            arr[...] = theta
            try:
                return value(pair, batch)
            finally:
                arr[...] = original

        analytic_all.append(analytic.ravel())
        numeric_all.append(finite_diff_grad(field, original).ravel())
    return relative_error(np.concatenate(analytic_all), np.concatenate(numeric_all))


def run_gradcheck(pair=None, batch=None, w_r=3.0, w_ent=2.0, corrupt=False):
    """Check every term; ``w_r == 0`` restricts the check to the LDCE path."""
    if pair is None:
        pair, batch = small_problem()
    n_params = sum(a.size for a in pair.online_params().values())
    if n_params > MAX_PARAMS:
        raise ValueError(f"gradcheck model has {n_params} parameters, limit is {MAX_PARAMS}")
    checks = {"ldce": _composite(LossWeights(0.0, 0.0))}
    if w_r > 0:
        checks["rep"] = _term(w_r, 0.0)
        checks["joint"] = _composite(LossWeights(w_r, w_ent))
        for kind in baselines.KINDS:
            checks[kind] = _baseline(kind)
    if w_ent > 0:
        checks["ent"] = _term(0.0, w_ent)
    errors = {name: check_term(pair, batch, fn, corrupt) for name, fn in checks.items()}
    return GradcheckReport(errors, n_params)

