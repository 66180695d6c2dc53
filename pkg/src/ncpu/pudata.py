"""Synthetic pools, PU splitting, vector augmentation and pair-set construction.

Label convention: truth 0 = positive, 1 = negative. In the sklearn-facing
arrays an observed label of 0 marks a labeled positive and -1 an unlabeled
sample, as in :mod:`sklearn.semi_supervised`.
"""
import csv
from dataclasses import dataclass

import numpy as np

UNLABELED = -1
DATASET_FORMAT = "ncpu-dataset"
DATASET_VERSION = 1


def gen_gaussians(n_per_class, d, separation, sigma, seed):
    """Two isotropic Gaussians centred at +-separation/2 on the first axis."""
    if n_per_class < 1 or d < 1 or sigma <= 0 or separation < 0:
        raise ValueError("need n_per_class >= 1, d >= 1, sigma > 0, separation >= 0")
    rng = np.random.default_rng(seed)
    centre = np.zeros(d)
    centre[0] = separation / 2.0
    X0 = centre + sigma * rng.standard_normal((n_per_class, d))
    X1 = -centre + sigma * rng.standard_normal((n_per_class, d))
    X = np.vstack([X0, X1])
    y = np.repeat([0, 1], n_per_class)
    return X, y


def gen_two_moons(n_per_class, noise, seed):
    """Interleaved half circles: class 0 on the upper unit arc, class 1 below."""
    if n_per_class < 1 or noise < 0:
        raise ValueError("need n_per_class >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(0.0, np.pi, n_per_class)
    t1 = rng.uniform(0.0, np.pi, n_per_class)
    X0 = np.column_stack([np.cos(t0), np.sin(t0)])
    X1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([X0, X1])
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    y = np.repeat([0, 1], n_per_class)
    return X, y


def gaussian_bayes_error(separation, sigma):
    """Closed-form error of the optimal rule for the equal-prior Gaussian pool."""
    from scipy.stats import norm
    return float(norm.cdf(-separation / (2.0 * sigma)))


@dataclass
class PuDataset:
    X: np.ndarray
    observed_p: np.ndarray  # bool
    truth: np.ndarray  # 0/1, hidden from training
    ids: np.ndarray
    pi_p: float
    seed: int = 0

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_p(self):
        return int(self.observed_p.sum())

    @property
    def n_u(self):
        return int((~self.observed_p).sum())

    def pu_labels(self):
        """Training-visible labels: 0 for labeled positives, -1 otherwise."""
        return np.where(self.observed_p, 0, UNLABELED)

    def audit(self):
        """Recount the class prior inside U and check P carries only positives."""
        u = ~self.observed_p
        known = not np.any(self.truth < 0)  # files written without truth carry -1
        return {
            "n_p": self.n_p,
            "n_u": self.n_u,
            "positives_in_u": int(np.sum(self.truth[u] == 0)) if known else None,
            "expected_positives_in_u": int(round(self.pi_p * self.n_u)),
            "p_all_positive": bool(np.all(self.truth[self.observed_p] == 0)) if known else None,
        }


def pu_split(X, y, n_p, n_u, pi_p, seed):
    """Draw P and U without replacement from a labeled pool."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not 0.0 <= pi_p < 1.0:
        raise ValueError("pi_p must lie in [0, 1)")
    n_pos_u = int(round(pi_p * n_u))
    need_pos, need_neg = n_p + n_pos_u, n_u - n_pos_u
    pos = np.flatnonzero(y == 0)
    neg = np.flatnonzero(y == 1)
    if len(pos) < need_pos or len(neg) < need_neg:
        raise ValueError(
            f"pool too small: need {need_pos} positives and {need_neg} negatives, "
            f"have {len(pos)} and {len(neg)}"
        )
    rng = np.random.default_rng(seed)
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    p_idx = pos[:n_p]
    u_idx = rng.permutation(np.concatenate([pos[n_p:need_pos], neg[:need_neg]]))
    idx = np.concatenate([p_idx, u_idx])
    observed = np.zeros(len(idx), dtype=bool)
    observed[:n_p] = True
    return PuDataset(X[idx].copy(), observed, y[idx].astype(int), np.arange(len(idx)), pi_p, seed)


@dataclass(frozen=True)
class AugConfig:
    noise_sigma: float = 0.1
    drop_prob: float = 0.1

    def __post_init__(self):
        if not np.all(np.asarray(self.noise_sigma) >= 0):
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")


def augment(X, cfg, rng):
    """Feature dropout followed by additive Gaussian noise.

    ``cfg.noise_sigma`` may be a scalar or a per-feature vector.
    """
    X = np.asarray(X, dtype=np.float64)
    out = X
    if cfg.drop_prob > 0:
        out = out * (rng.random(X.shape) >= cfg.drop_prob)
    if np.any(np.asarray(cfg.noise_sigma) > 0):
        out = out + rng.standard_normal(X.shape) * cfg.noise_sigma
    return out.copy() if out is X else out


def pairing_labels(observed_p, probs):
    """Labels used for pairing: 0 for labeled positives, argmax f otherwise."""
    labels = np.argmax(probs, axis=1)
    labels[np.asarray(observed_p, dtype=bool)] = 0
    return labels


def pair_sets(labels, mode="label", f_neg=None, sim_threshold=0.2):
    """Boolean (B, B) matrix whose row i is the pair set of anchor i.

    ``label`` mode pairs equal pairing labels; ``similarity`` mode pairs
    samples whose agreement ``f1_i f1_j + (1 - f1_i)(1 - f1_j)`` reaches
    ``sim_threshold``. The anchor itself (its second view) is always included.
    """
    labels = np.asarray(labels)
    if mode == "label":
        M = labels[:, None] == labels[None, :]
    elif mode == "similarity":
        f = np.asarray(f_neg, dtype=np.float64)
        M = np.outer(f, f) + np.outer(1.0 - f, 1.0 - f) >= sim_threshold
    else:
        raise ValueError(f"unknown pair mode {mode!r}")
    np.fill_diagonal(M, True)
    return M


def write_dataset(ds, path, include_truth=True):
    """CSV with a metadata row, a header row and one row per sample.

    Leave ``include_truth`` off for training-visible files; evaluation exports
    keep the truth column.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"#{DATASET_FORMAT}", f"version={DATASET_VERSION}", f"d={ds.d}",
                    f"pi_p={ds.pi_p!r}", f"seed={ds.seed}"])
        cols = ["id", "observed"] + (["truth"] if include_truth else [])
        w.writerow(cols + [f"x{j}" for j in range(ds.d)])
        for i in range(len(ds.X)):
            row = [int(ds.ids[i]), "P" if ds.observed_p[i] else "U"]
            if include_truth:
                row.append(int(ds.truth[i]))
            w.writerow(row + [repr(float(v)) for v in ds.X[i]])
    return path


def read_dataset(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        meta_row = next(r)
        if not meta_row or meta_row[0] != f"#{DATASET_FORMAT}":
            raise ValueError(f"{path} is not an {DATASET_FORMAT} file")
        meta = dict(item.split("=", 1) for item in meta_row[1:])
        if int(meta["version"]) != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {meta['version']}")
        cols = next(r)
        rows = list(r)
    d = int(meta["d"])
    has_truth = "truth" in cols
    off = 3 if has_truth else 2
    ids = np.array([int(row[0]) for row in rows])
    observed = np.array([row[1] == "P" for row in rows])
    truth = np.array([int(row[2]) for row in rows]) if has_truth else np.full(len(rows), -1)
    X = np.array([[float(v) for v in row[off:off + d]] for row in rows]).reshape(len(rows), d)
    return PuDataset(X, observed, truth, ids, float(meta["pi_p"]), int(meta["seed"]))
