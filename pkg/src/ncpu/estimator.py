"""scikit-learn estimators for positive-unlabeled training.

``y`` follows the :mod:`sklearn.semi_supervised` convention: 0 marks a labeled
positive and -1 an unlabeled sample. Predictions use the two-class convention
of the rest of the package (0 = positive, 1 = negative), and ``predict_proba``
columns are ordered ``[positive, negative]``.
"""
import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model, trainer
from .numerics import l2_normalize_rows
from .pudata import UNLABELED, AugConfig

logger = logging.getLogger(__name__)


def check_pu_labels(y):
    """Return a boolean mask of labeled positives from 0 / -1 labels."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-D, got shape {y.shape}")
    bad = ~np.isin(y, (0, UNLABELED))
    if bad.any():
        raise ValueError(
            f"PU labels must be 0 (labeled positive) or {UNLABELED} (unlabeled); "
            f"found {sorted(set(np.unique(y[bad]).tolist()))}"
        )
    observed_p = y == 0
    if not observed_p.any():
        raise ValueError("need at least one labeled positive")
    if observed_p.all():
        raise ValueError("need at least one unlabeled sample")
    return observed_p


class _PUNetworkEstimator(ClassifierMixin, TransformerMixin, BaseEstimator):
    # subclasses provide __init__ so get_params sees explicit keyword arguments

    def _settings(self):
        raise NotImplementedError

    def _aug_config(self, X):
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return AugConfig(self.noise_scale * scale, self.drop_prob)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        observed_p = check_pu_labels(y)
        settings = self._settings()
        errors = settings.validate()
        if errors:
            raise ValueError("; ".join(errors))
        spec = model.NetworkSpec(X.shape[1], encoder_hidden=tuple(self.hidden),
                                 projector_dim=self.embed_dim, predictor_dim=self.embed_dim,
                                 activation=self.activation)
        seed = 0 if self.random_state is None else int(self.random_state)
        state = trainer.init_state(X, observed_p, settings, spec, self._aug_config(X), seed)
        for _ in range(settings.epochs):
            trainer.train_epoch(state)
        self.state_ = state
        self.network_ = state.pair
        self.loss_history_ = [bd.as_dict() for bd in state.history]
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._check_X(X)
        return model.classify(self.network_, X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def decision_function(self, X):
        """Log-odds of the positive class."""
        X = self._check_X(X)
        logits = model.classifier_logits(self.network_, X)
        return logits[:, 0] - logits[:, 1]

    def transform(self, X):
        """Unit-norm online embeddings."""
        X = self._check_X(X)
        q = model.online_embed(self.network_, X)
        return l2_normalize_rows(q)[0]


class NcPUClassifier(_PUNetworkEstimator):
    """Positive-unlabeled classifier trained with phantom label disambiguation
    and the noisy-pair-robust non-contrastive representation loss.

    Parameters
    ----------
    hidden : tuple of int
        Encoder widths after the input layer.
    embed_dim : int
        Projector and predictor width.
    w_r, w_ent : float
        Weights of the representation and entropy terms.
    noise_scale : float
        Augmentation noise as a fraction of each feature's standard deviation.
    random_state : int or None
        Run seed; every random stream is derived from it.
    """

    def __init__(self, hidden=(64, 64), embed_dim=32, activation="tanh", epochs=200,
                 warm_up_epochs=10, batch_size=64, lr=0.001, sgd_momentum=0.9,
                 lr_schedule="constant", alpha=0.99, beta=0.99, gamma=0.99, eta=0.99,
                 w_r=50.0, w_ent=5.0, pair_mode="label", sim_threshold=0.2,
                 noise_scale=0.1, drop_prob=0.1, random_state=0):
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.activation = activation
        self.epochs = epochs
        self.warm_up_epochs = warm_up_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sgd_momentum = sgd_momentum
        self.lr_schedule = lr_schedule
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.eta = eta
        self.w_r = w_r
        self.w_ent = w_ent
        self.pair_mode = pair_mode
        self.sim_threshold = sim_threshold
        self.noise_scale = noise_scale
        self.drop_prob = drop_prob
        self.random_state = random_state

    def _settings(self):
        return trainer.TrainSettings(
            method="NcPU", epochs=self.epochs, warm_up_epochs=self.warm_up_epochs,
            batch_size=self.batch_size, lr=self.lr, sgd_momentum=self.sgd_momentum,
            lr_schedule=self.lr_schedule, alpha=self.alpha, beta=self.beta, gamma=self.gamma,
            eta=self.eta, w_r=self.w_r, w_ent=self.w_ent, pair_mode=self.pair_mode,
            sim_threshold=self.sim_threshold)

    @property
    def pseudo_targets_(self):
        """Targets the trained state would emit for every training sample."""
        check_is_fitted(self, "state_")
        probs = model.classify(self.network_, self.state_.X)
        return self.state_.current_targets(probs)


class PUBaselineClassifier(_PUNetworkEstimator):
    """CE (unlabeled as negative), uPU or nnPU on the same backbone.

    ``with_rep=True`` adds the non-contrastive representation term with
    weight ``w_r``. uPU and nnPU need the true class prior ``pi_p`` of the
    unlabeled data.
    """

    def __init__(self, kind="nnPU", pi_p=None, with_rep=False, hidden=(64, 64), embed_dim=32,
                 activation="tanh", epochs=200, batch_size=64, lr=0.001, sgd_momentum=0.9,
                 lr_schedule="constant", eta=0.99, w_r=50.0, pair_mode="label",
                 sim_threshold=0.2, noise_scale=0.1, drop_prob=0.1, random_state=0):
        self.kind = kind
        self.pi_p = pi_p
        self.with_rep = with_rep
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sgd_momentum = sgd_momentum
        self.lr_schedule = lr_schedule
        self.eta = eta
        self.w_r = w_r
        self.pair_mode = pair_mode
        self.sim_threshold = sim_threshold
        self.noise_scale = noise_scale
        self.drop_prob = drop_prob
        self.random_state = random_state

    def _settings(self):
        method = f"{self.kind}+rep" if self.with_rep else self.kind
        return trainer.TrainSettings(
            method=method, epochs=self.epochs, warm_up_epochs=0, batch_size=self.batch_size,
            lr=self.lr, sgd_momentum=self.sgd_momentum, lr_schedule=self.lr_schedule,
            eta=self.eta, w_r=self.w_r, w_ent=0.0, pair_mode=self.pair_mode,
            sim_threshold=self.sim_threshold, pi_p=self.pi_p)
