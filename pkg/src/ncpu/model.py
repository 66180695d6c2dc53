"""MLP backbone with explicit backprop, online/target network pair, SGD.

The online branch is encoder -> projector -> predictor, the classifier head
shares the encoder, and the target branch mirrors encoder -> projector only
(no predictor). Target parameters never receive gradients; they only move by
:func:`momentum_update_target`.
"""
import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import LossWeights, composite_loss
from .numerics import softmax

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"
    final_activation: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")


class Mlp:
    def __init__(self, spec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        widths = spec.layer_widths
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise ValueError(f"layer {i} shape mismatch for widths {widths}")

    @classmethod
    def init(cls, spec, rng):
        weights, biases = [], []
        n_layers = len(spec.layer_widths) - 1
        for i, (fan_in, fan_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
            # He gain before a rectifier, unit gain on a linear output layer
            activated = i < n_layers - 1 or spec.final_activation
            bound = np.sqrt((6.0 if activated else 3.0) / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @property
    def in_dim(self):
        return self.spec.layer_widths[0]

    def params(self, prefix):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = W
            out[f"{prefix}.b{i}"] = b
        return out

    def forward(self, X, cache=False):
        act, _ = _ACTIVATIONS[self.spec.activation]
        a = X
        trace = []
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            activated = i < n_layers - 1 or self.spec.final_activation
            out = act(z) if activated else z
            trace.append((a, z, out, activated))
            a = out
        return (a, trace) if cache else a

    def backward(self, trace, grad_out, prefix):
        _, dact = _ACTIVATIONS[self.spec.activation]
        grads = {}
        g = grad_out
        for i in reversed(range(len(self.weights))):
            a_in, z, out, activated = trace[i]
            if activated:
                g = g * dact(z, out)
            grads[f"{prefix}.W{i}"] = a_in.T @ g
            grads[f"{prefix}.b{i}"] = g.sum(axis=0)
            if not np.all(np.isfinite(grads[f"{prefix}.W{i}"])):
                raise NonFiniteError(f"non-finite gradient in {prefix} layer {i}")
            g = g @ self.weights[i].T
        return g, grads


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    encoder_hidden: tuple = (64, 64)
    projector_dim: int = 32
    predictor_dim: int = 32
    n_classes: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(w) for w in self.encoder_hidden))
        if self.input_dim <= 0 or not self.encoder_hidden:
            raise ValueError("input_dim must be positive and the encoder needs at least one layer")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if self.predictor_dim != self.projector_dim:
            raise ValueError("predictor output must match the projector width (q and k are compared)")

    @property
    def feature_dim(self):
        return self.encoder_hidden[-1]

    def encoder(self):
        return MlpSpec((self.input_dim,) + self.encoder_hidden, self.activation, final_activation=True)

    def projector(self):
        return MlpSpec((self.feature_dim, self.projector_dim), self.activation)

    def predictor(self):
        return MlpSpec((self.projector_dim, self.predictor_dim), self.activation)

    def classifier(self):
        return MlpSpec((self.feature_dim, self.n_classes), self.activation)


ONLINE_PARTS = ("encoder", "projector", "predictor", "classifier")
TARGET_PARTS = ("target_encoder", "target_projector")


@dataclass
class NetworkPair:
    spec: NetworkSpec
    encoder: Mlp
    projector: Mlp
    predictor: Mlp
    classifier: Mlp
    target_encoder: Mlp
    target_projector: Mlp
    eta: float = 0.99
    seed: int = field(default=0)

    def online_params(self):
        out = {}
        for name in ONLINE_PARTS:
            out.update(getattr(self, name).params(name))
        return out

    def target_params(self):
        out = {}
        for name in TARGET_PARTS:
            out.update(getattr(self, name).params(name))
        return out

    def all_params(self):
        return {**self.online_params(), **self.target_params()}

    def copy(self):
        return copy.deepcopy(self)


def init(spec, seed, eta=0.99):
    """Build a network pair; the target starts as an exact copy of the online side."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    enc = Mlp.init(spec.encoder(), rng)
    proj = Mlp.init(spec.projector(), rng)
    pred = Mlp.init(spec.predictor(), rng)
    clf = Mlp.init(spec.classifier(), rng)
    return NetworkPair(spec, enc, proj, pred, clf, copy.deepcopy(enc), copy.deepcopy(proj),
                       eta=eta, seed=seed)


def _as_batch(pair, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != pair.spec.input_dim:
        raise ValueError(f"expected {pair.spec.input_dim} features, got {X.shape[1]}")
    return X, single


def _maybe_squeeze(out, single):
    return out[0] if single else out


def classifier_logits(pair, X):
    X, single = _as_batch(pair, X)
    return _maybe_squeeze(pair.classifier.forward(pair.encoder.forward(X)), single)


def classify(pair, X):
    return softmax(classifier_logits(pair, X))


def online_embed(pair, X):
    X, single = _as_batch(pair, X)
    q = pair.predictor.forward(pair.projector.forward(pair.encoder.forward(X)))
    return _maybe_squeeze(q, single)


def target_embed(pair, X):
    X, single = _as_batch(pair, X)
    k = pair.target_projector.forward(pair.target_encoder.forward(X))
    return _maybe_squeeze(k, single)


def momentum_update_target(pair):
    eta = pair.eta
    for online_name, target_name in zip(("encoder", "projector"), TARGET_PARTS):
        online, target = getattr(pair, online_name), getattr(pair, target_name)
        for i in range(len(target.weights)):
            target.weights[i] = eta * target.weights[i] + (1.0 - eta) * online.weights[i]
            target.biases[i] = eta * target.biases[i] + (1.0 - eta) * online.biases[i]
    return pair


@dataclass
class ForwardCache:
    logits: np.ndarray
    q: np.ndarray
    enc: list
    clf: list
    proj: list
    pred: list


def forward_train(pair, X):
    """Online forward pass keeping the intermediates needed by :func:`backprop`."""
    X, _ = _as_batch(pair, X)
    h, enc = pair.encoder.forward(X, cache=True)
    logits, clf = pair.classifier.forward(h, cache=True)
    z, proj = pair.projector.forward(h, cache=True)
    q, pred = pair.predictor.forward(z, cache=True)
    return ForwardCache(logits, q, enc, clf, proj, pred)


def backprop(pair, cache, g_logits, g_q=None):
    """Push gradients w.r.t. logits and online embeddings down to every online parameter."""
    grads = {}
    g_h, g = pair.classifier.backward(cache.clf, g_logits, "classifier")
    grads.update(g)
    if g_q is not None:
        g_z, g = pair.predictor.backward(cache.pred, g_q, "predictor")
        grads.update(g)
        g_h2, g = pair.projector.backward(cache.proj, g_z, "projector")
        grads.update(g)
        g_h = g_h + g_h2
    else:
        for name in ("predictor", "projector"):
            grads.update({k: np.zeros_like(v) for k, v in getattr(pair, name).params(name).items()})
    _, g = pair.encoder.backward(cache.enc, g_h, "encoder")
    grads.update(g)
    return grads


def backward(pair, view, view_prime, targets, observed_p, pair_mask,
             weights=LossWeights(), rep_kind="noisncl"):
    """Loss breakdown and gradients of the composite objective.

    ``view`` feeds the online branch and the classifier, ``view_prime`` the
    target branch. Target parameters are constants here.
    """
    cache = forward_train(pair, view)
    k = target_embed(pair, view_prime) if weights.w_r > 0 else None
    bd, g_logits, g_q = composite_loss(cache.logits, targets, observed_p, cache.q, k,
                                       pair_mask, weights, rep_kind)
    if not np.isfinite(bd.total):
        raise NonFiniteError(f"non-finite loss: {bd}")
    return bd, backprop(pair, cache, g_logits, g_q)


class SGD:
    """Heavy-ball SGD over the online parameters (``v = m v + g; p -= lr v``)."""

    def __init__(self, lr, momentum=0.9):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, pair, grads):
        params = pair.online_params()
        for name, g in grads.items():
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] -= self.lr * v
        return pair


def sgd_step(pair, grads, lr, momentum_coeff=0.0, optimizer=None):
    opt = optimizer if optimizer is not None else SGD(lr, momentum_coeff)
    return opt.step(pair, grads)


def save_checkpoint(pair, path):
    """Write an ``.npz`` holding every parameter plus a JSON header entry."""
    header = {"format": "ncpu-checkpoint", "version": CHECKPOINT_VERSION,
              "spec": asdict(pair.spec), "seed": pair.seed, "eta": pair.eta}
    arrays = {k: v for k, v in pair.all_params().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != "ncpu-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint header: {header}")
        spec = NetworkSpec(**header["spec"])
        pair = init(spec, header["seed"], header["eta"])
        for name, arr in pair.all_params().items():
            if data[name].shape != arr.shape:
                raise ValueError(f"checkpoint parameter {name} has shape {data[name].shape}")
            arr[...] = data[name]
    return pair
