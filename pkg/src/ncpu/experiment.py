"""Config-driven training runs with CSV/JSON output.

A run is a pure function of its :class:`RunConfig` (seed included). The data
pool, the test set, the P/U split, initialization, augmentation and batch
order all draw from named sub-streams of the run seed, so the metrics and
diagnostics CSVs are byte-identical across repeated runs.
"""
import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import model, pld, pudata, trainer
from .numerics import DegenerateVectorError, l2_normalize_rows
from .trainer import STREAM_DATA, TrainSettings, substream

logger = logging.getLogger(__name__)

DATASET_KINDS = ("gaussians", "moons", "file")
METRIC_COLUMNS = ("epoch", "ldce_p", "ldce_u", "rep", "ent", "total",
                  "oa", "f1", "precision", "recall", "auc")
DIAGNOSTIC_COLUMNS = ("epoch", "l1", "l2", "rr_pairwise", "rr_clusterform", "rr_tilde",
                      "norm_nu_0", "norm_nu_1", "tau_tilde", "rho_0", "rho_1", "tau",
                      "regioned_precondition", "regioned_holds")

# sub-stream tags under STREAM_DATA
_POOL, _TEST, _SPLIT, _DIAG = range(4)


@dataclass
class DatasetConfig:
    kind: str = "gaussians"
    n_per_class: int = 3000
    d: int = 2
    separation: float = 4.0
    sigma: float = 1.0
    noise: float = 0.25
    n_p: int = 100
    n_u: int = 2000
    pi_p: float = 0.4
    n_test_per_class: int = 1000
    path: str = ""
    test_path: str = ""

    def validate(self):
        errors = []
        if self.kind not in DATASET_KINDS:
            errors.append(f"dataset.kind must be one of {DATASET_KINDS}")
        if self.kind == "file":
            if not self.path:
                errors.append("dataset.path is required when dataset.kind = file")
            for name in ("path", "test_path"):
                p = getattr(self, name)
                if p and not os.path.isfile(p):
                    errors.append(f"dataset.{name} {p!r} does not exist")
            return errors
        if self.kind == "moons" and self.d != 2:
            errors.append("dataset.d must be 2 for moons")
        if not 0.0 <= self.pi_p < 1.0:
            errors.append("dataset.pi_p must lie in [0, 1)")
        for name in ("n_per_class", "d", "n_p", "n_u"):
            if getattr(self, name) < 1:
                errors.append(f"dataset.{name} must be >= 1")
        if self.n_test_per_class < 0:
            errors.append("dataset.n_test_per_class must be >= 0")
        if self.sigma <= 0 or self.separation < 0 or self.noise < 0:
            errors.append("dataset.sigma must be > 0, separation and noise >= 0")
        n_pos_u = int(round(self.pi_p * self.n_u))
        if self.n_p + n_pos_u > self.n_per_class or self.n_u - n_pos_u > self.n_per_class:
            errors.append("dataset.n_per_class is too small for the requested P/U split")
        return errors


@dataclass
class ModelConfig:
    hidden: tuple = (64, 64)
    embed_dim: int = 32
    activation: str = "tanh"

    def validate(self):
        errors = []
        if not self.hidden or any(int(w) < 1 for w in self.hidden):
            errors.append("model.hidden must list positive widths")
        if self.embed_dim < 1:
            errors.append("model.embed_dim must be >= 1")
        if self.activation not in ("relu", "tanh"):
            errors.append("model.activation must be relu or tanh")
        return errors

    def network_spec(self, input_dim):
        return model.NetworkSpec(input_dim, encoder_hidden=tuple(self.hidden),
                                 projector_dim=self.embed_dim, predictor_dim=self.embed_dim,
                                 activation=self.activation)


@dataclass
class AugmentConfig:
    noise_scale: float = 0.1  # times the per-feature standard deviation
    drop_prob: float = 0.1

    def validate(self):
        errors = []
        if self.noise_scale < 0:
            errors.append("augment.noise_scale must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            errors.append("augment.drop_prob must lie in [0, 1)")
        return errors

    def for_data(self, X):
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return pudata.AugConfig(self.noise_scale * scale, self.drop_prob)


@dataclass
class OutputConfig:
    out_dir: str = "runs/default"
    diag_every: int = 10
    diag_max: int = 512
    checkpoint: bool = True
    export_embeddings: bool = True
    pld_snapshots: bool = False  # one JSON state file per epoch under pld_state/

    def validate(self):
        errors = []
        if self.diag_every < 1:
            errors.append("run.diag_every must be >= 1")
        if self.diag_max < 2:
            errors.append("run.diag_max must be >= 2")
        return errors


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    run: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    SECTIONS = ("dataset", "model", "train", "augment", "run")

    def validate(self):
        """Every problem in the config at once; training settings are checked
        with the dataset prior filled in."""
        errors = []
        for name in self.SECTIONS:
            if name != "train":
                errors += getattr(self, name).validate()
        file_prior = None
        if self.dataset.kind == "file" and os.path.isfile(self.dataset.path):
            file_prior = pudata.read_dataset(self.dataset.path).pi_p
        return errors + self.effective_train(file_prior).validate()

    def effective_train(self, data_pi_p=None):
        """Training settings with the dataset's true prior filled in for risk estimators."""
        if self.train.pi_p is not None:
            return self.train
        pi_p = data_pi_p if data_pi_p is not None else self.dataset.pi_p
        return replace(self.train, pi_p=pi_p)

    def as_dict(self):
        out = {name: asdict(getattr(self, name)) for name in self.SECTIONS}
        out["seed"] = self.seed
        out["model"]["hidden"] = list(self.model.hidden)
        return out


def section_fields(cfg, section):
    return {f.name: f for f in fields(getattr(cfg, section))}


@dataclass
class DataBundle:
    train: pudata.PuDataset
    X_test: np.ndarray
    y_test: np.ndarray


def _seed_for(seed, tag):
    return int(substream(seed, STREAM_DATA, tag).integers(2**31))


def _generate_pool(cfg, seed):
    if cfg.kind == "gaussians":
        return pudata.gen_gaussians(cfg.n_per_class, cfg.d, cfg.separation, cfg.sigma, seed)
    return pudata.gen_two_moons(cfg.n_per_class, cfg.noise, seed)


def make_data(cfg, seed):
    """Training PU split and held-out test set for a dataset config."""
    if cfg.kind == "file":
        train = pudata.read_dataset(cfg.path)
        if not cfg.test_path:
            logger.info("no test_path given; metrics columns will be empty")
            return DataBundle(train, np.empty((0, train.d)), np.empty(0, dtype=int))
        test = pudata.read_dataset(cfg.test_path)
        if test.d != train.d:
            raise ValueError(f"test file has {test.d} features, training file {train.d}")
        if np.any(test.truth < 0):
            raise ValueError("evaluation data must carry truth labels")
        return DataBundle(train, test.X, test.truth)
    X, y = _generate_pool(cfg, _seed_for(seed, _POOL))
    train = pudata.pu_split(X, y, cfg.n_p, cfg.n_u, cfg.pi_p, _seed_for(seed, _SPLIT))
    train.seed = seed
    if cfg.n_test_per_class > 0:
        test_cfg = replace(cfg, n_per_class=cfg.n_test_per_class)
        X_test, y_test = _generate_pool(test_cfg, _seed_for(seed, _TEST))
    else:
        X_test, y_test = np.empty((0, train.d)), np.empty(0, dtype=int)
    return DataBundle(train, X_test, y_test)


def held_out_dataset(bundle, pi_p):
    """Wrap the held-out set as a dataset file (every row unlabeled, truth kept)."""
    n = len(bundle.X_test)
    return pudata.PuDataset(bundle.X_test, np.zeros(n, dtype=bool), bundle.y_test,
                            np.arange(n), pi_p, bundle.train.seed)


def diagnostic_subset(observed_p, limit, seed):
    """Fixed, sorted subsample of at most ``limit`` unlabeled rows."""
    u = np.flatnonzero(~np.asarray(observed_p, dtype=bool))
    if len(u) <= limit:
        return u
    return np.sort(substream(seed, STREAM_DATA, _DIAG).choice(u, limit, replace=False))


def snapshot_diagnostics(pair, X):
    """EM diagnostics of unit online embeddings grouped by predicted class."""
    probs = model.classify(pair, X)
    z = l2_normalize_rows(model.online_embed(pair, X))[0]
    diag = trainer.em_diagnostics(z, np.argmax(probs, axis=1))
    out = diag.as_dict()
    out["regioned_precondition"] = diag.nonneg_cosines
    out["regioned_holds"] = bool(diag.rr_tilde >= diag.rr_pairwise - 1e-12)
    return out


@dataclass
class RunReport:
    config: dict
    history: list
    diagnostics: list
    final: trainer.MetricsReport
    wall_time: float
    paths: dict


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def export_embeddings(path, pair, ds, targets=None):
    """id, truth, predicted, pseudo-target entries and unit embedding coordinates.

    Without ``targets`` the classifier's probabilities fill the target columns.
    """
    probs = model.classify(pair, ds.X)
    z = l2_normalize_rows(model.online_embed(pair, ds.X))[0]
    targets = probs if targets is None else targets
    cols = ["id", "observed", "truth", "predicted", "target_0", "target_1"]
    cols += [f"z{j}" for j in range(z.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(ds.X)):
            w.writerow([int(ds.ids[i]), "P" if ds.observed_p[i] else "U", int(ds.truth[i]),
                        int(np.argmax(probs[i]))]
                       + [_fmt(t) for t in targets[i]] + [_fmt(v) for v in z[i]])
    return path


def _diag_row(state, X_diag):
    row = snapshot_diagnostics(state.pair, X_diag)
    row.update(epoch=state.epoch, tau_tilde=state.sat.tau_tilde, rho_0=state.sat.rho_tilde[0],
               rho_1=state.sat.rho_tilde[1], tau=state.tau)
    return row


def run(config, out_dir=None, data=None):
    """Train one method on one dataset and write every output file.

    Returns a :class:`RunReport`. A numeric failure writes ``failure.json``
    with the last known state before re-raising.
    """
    errors = config.validate()
    if errors:
        raise ValueError("invalid run config:\n  " + "\n  ".join(errors))
    out_dir = out_dir or config.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    bundle = data if data is not None else make_data(config.dataset, config.seed)
    ds = bundle.train
    train_settings = config.effective_train(ds.pi_p)
    spec = config.model.network_spec(ds.d)
    state = trainer.init_state(ds.X, ds.observed_p, train_settings, spec,
                               config.augment.for_data(ds.X), config.seed)
    X_diag = ds.X[diagnostic_subset(ds.observed_p, config.run.diag_max, config.seed)]
    has_test = len(bundle.X_test) > 0

    history, diagnostics = [], [_diag_row(state, X_diag)]
    snap_dir = os.path.join(out_dir, "pld_state")
    if config.run.pld_snapshots:
        os.makedirs(snap_dir, exist_ok=True)
    try:
        for _ in range(train_settings.epochs):
            bd = trainer.train_epoch(state)
            if config.run.pld_snapshots:
                pld.export_state(os.path.join(snap_dir, f"epoch_{state.epoch:04d}.json"),
                                 state.protos, state.sat, state.phantom, state.epoch)
            row = {"epoch": state.epoch, **bd.as_dict()}
            if has_test:
                row.update(trainer.evaluate(state.pair, bundle.X_test, bundle.y_test).as_dict())
            else:
                row.update(dict.fromkeys(("oa", "f1", "precision", "recall", "auc"), float("nan")))
            history.append(row)
            if state.epoch % config.run.diag_every == 0 or state.epoch == train_settings.epochs:
                diagnostics.append(_diag_row(state, X_diag))
    except (FloatingPointError, DegenerateVectorError) as exc:
        _write_failure(out_dir, state, history, exc)
        raise

    paths = {"metrics": os.path.join(out_dir, "metrics.csv"),
             "diagnostics": os.path.join(out_dir, "diagnostics.csv"),
             "summary": os.path.join(out_dir, "summary.json")}
    _write_csv(paths["metrics"], METRIC_COLUMNS, history)
    _write_csv(paths["diagnostics"], DIAGNOSTIC_COLUMNS, diagnostics)
    if config.run.checkpoint:
        paths["checkpoint"] = model.save_checkpoint(state.pair, os.path.join(out_dir, "checkpoint.npz"))
    if config.run.export_embeddings:
        probs = model.classify(state.pair, ds.X)
        paths["embeddings"] = export_embeddings(os.path.join(out_dir, "embeddings.csv"), state.pair,
                                                ds, state.current_targets(probs))
    final = (trainer.evaluate(state.pair, bundle.X_test, bundle.y_test) if has_test else None)
    wall = time.perf_counter() - t0
    summary = {
        "config": config.as_dict(),
        "seed": config.seed,
        "method": train_settings.method,
        "final_metrics": final.as_dict() if final else None,
        "l1_le_l2_all_snapshots": all(r["l1"] <= r["l2"] for r in diagnostics),
        "regioned_inequality": [{"epoch": r["epoch"], "precondition": r["regioned_precondition"],
                                 "holds": r["regioned_holds"]} for r in diagnostics],
        "audit": ds.audit(),
        "wall_time_s": wall,
    }
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    return RunReport(config.as_dict(), history, diagnostics, final, wall, paths)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_failure(out_dir, state, history, exc):
    dump = {"error": str(exc), "epoch": state.epoch, "tau": state.tau,
            "tau_tilde": state.sat.tau_tilde, "rho_tilde": state.sat.rho_tilde.tolist(),
            "last_epochs": history[-5:]}
    with open(os.path.join(out_dir, "failure.json"), "w") as fh:
        json.dump(dump, fh, indent=2, default=_json_default)
