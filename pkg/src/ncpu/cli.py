"""``ncpu`` command line: generate, train, eval, gradcheck, diagnose.

Config files are INI documents read with :mod:`configparser`; the sections
and keys are listed in ``docs/config.md``. Precedence is built-in defaults,
then the config file, then command-line flags.

Exit codes: 0 success, 1 validation or I/O error, 2 numeric failure
(non-finite loss, degenerate embedding, failed gradient check).
"""
import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import MISSING, fields, replace

import numpy as np

from . import experiment, gradcheck, model, pudata, trainer
from .numerics import DegenerateVectorError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

logger = logging.getLogger("ncpu")


class ConfigError(ValueError):
    pass


def _default_of(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _parse_value(section, key, raw, f):
    default = _default_of(f)
    text = raw.strip()
    try:
        if isinstance(default, bool) or f.type is bool:
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(f"not a boolean: {text!r}")
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if isinstance(default, tuple) or f.type is tuple:
            return tuple(int(part) for part in text.split(",") if part.strip())
        if f.type is float or isinstance(default, float):
            return None if text.lower() == "none" else float(text)
        if f.type is int:
            return int(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def load_config(path=None):
    """Build a :class:`~ncpu.experiment.RunConfig`, rejecting unknown sections and keys."""
    cfg = experiment.RunConfig()
    if path is None:
        return cfg
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive field names
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    errors = []
    if parser.defaults():
        errors.append("keys outside a section are not allowed")
    for section in parser.sections():
        if section not in experiment.RunConfig.SECTIONS:
            errors.append(f"unknown section [{section}]")
            continue
        known = {f.name: f for f in fields(getattr(cfg, section))}
        updates = {}
        for key, raw in parser.items(section):
            if section == "run" and key == "seed":
                try:
                    cfg.seed = int(raw)
                except ValueError:
                    errors.append(f"[run] seed: not an integer: {raw!r}")
                continue
            if key not in known:
                errors.append(f"unknown key [{section}] {key}")
                continue
            try:
                updates[key] = _parse_value(section, key, raw, known[key])
            except ConfigError as exc:
                errors.append(str(exc))
        setattr(cfg, section, replace(getattr(cfg, section), **updates))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def apply_flags(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "method", None) is not None:
        cfg.train = replace(cfg.train, method=args.method)
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "out", None) is not None and args.command == "train":
        cfg.run = replace(cfg.run, out_dir=args.out)
    return cfg


def _check_writable_dir(path):
    path = os.path.abspath(path or ".")
    probe = path
    while not os.path.exists(probe):
        probe = os.path.dirname(probe)
    if not os.access(probe, os.W_OK):
        raise ConfigError(f"output location {path!r} is not writable")


def cmd_generate(args):
    cfg = apply_flags(load_config(args.config), args)
    errors = cfg.dataset.validate()
    if cfg.dataset.kind == "file":
        errors.append("generate needs a synthetic dataset.kind (gaussians or moons)")
    if errors:
        raise ConfigError("\n  ".join(errors))
    out = args.out or os.path.join(cfg.run.out_dir, "dataset.csv")
    _check_writable_dir(os.path.dirname(out))
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    bundle = experiment.make_data(cfg.dataset, cfg.seed)
    pudata.write_dataset(bundle.train, out, include_truth=False)
    print(f"wrote {out}")
    if len(bundle.X_test):
        stem, ext = os.path.splitext(out)
        test_out = f"{stem}.test{ext or '.csv'}"
        pudata.write_dataset(experiment.held_out_dataset(bundle, cfg.dataset.pi_p), test_out)
        print(f"wrote {test_out}")
    audit = bundle.train.audit()
    print(f"n_p={audit['n_p']} n_u={audit['n_u']} positives_in_u={audit['positives_in_u']} "
          f"expected_positives_in_u={audit['expected_positives_in_u']} "
          f"p_all_positive={audit['p_all_positive']}")
    return EXIT_OK


def cmd_train(args):
    cfg = apply_flags(load_config(args.config), args)
    errors = cfg.validate()
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    _check_writable_dir(cfg.run.out_dir)
    report = experiment.run(cfg)
    if report.final is not None:
        m = report.final
        print(f"{cfg.train.method} seed={cfg.seed} oa={m.oa:.4f} f1={m.f1:.4f} "
              f"precision={m.precision:.4f} recall={m.recall:.4f} auc={m.auc:.4f}")
    for name, path in sorted(report.paths.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _load_pair_and_data(args):
    for name in ("checkpoint", "data"):
        if not os.path.isfile(getattr(args, name)):
            raise ConfigError(f"--{name} {getattr(args, name)!r} does not exist")
    pair = model.load_checkpoint(args.checkpoint)
    ds = pudata.read_dataset(args.data)
    if ds.d != pair.spec.input_dim:
        raise ConfigError(f"dataset has {ds.d} features, checkpoint expects {pair.spec.input_dim}")
    return pair, ds


def cmd_eval(args):
    pair, ds = _load_pair_and_data(args)
    if np.any(ds.truth < 0):
        raise ConfigError("evaluation needs a dataset file with truth labels")
    metrics = trainer.evaluate(pair, ds.X, ds.truth).as_dict()
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _check_writable_dir(os.path.dirname(args.out))
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else 0
    # the stock model is too large for a finite-difference sweep, so an
    # unchanged [model] section falls back to the small check network
    if cfg.model != experiment.ModelConfig():
        d = cfg.dataset.d if cfg.dataset.kind != "moons" else 2
        pair, batch = gradcheck.small_problem(d, tuple(cfg.model.hidden), cfg.model.embed_dim,
                                              seed=seed)
    else:
        pair, batch = gradcheck.small_problem(seed=seed)
    report = gradcheck.run_gradcheck(pair, batch, cfg.train.w_r, cfg.train.w_ent,
                                     corrupt=args.corrupt_gradient)
    print(f"parameters: {report.n_params} (limit {gradcheck.MAX_PARAMS})")
    for term, err in report.errors.items():
        status = "PASS" if err <= report.threshold else "FAIL"
        print(f"{term:6s} rel_err={err:.3e} {status}")
    print(f"{'PASS' if report.passed else 'FAIL'} worst={report.worst:.3e} "
          f"threshold={report.threshold:g}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_diagnose(args):
    pair, ds = _load_pair_and_data(args)
    out_dir = args.out or "."
    _check_writable_dir(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else pair.seed
    rows = ds.observed_p if ds.n_u >= 2 else np.zeros(len(ds.X), dtype=bool)
    subset = experiment.diagnostic_subset(rows, experiment.OutputConfig().diag_max, seed)
    row = experiment.snapshot_diagnostics(pair, ds.X[subset])
    row.update(epoch="", tau_tilde=float("nan"), rho_0=float("nan"), rho_1=float("nan"),
               tau=float("nan"))
    diag_path = os.path.join(out_dir, "diagnostics.csv")
    experiment._write_csv(diag_path, experiment.DIAGNOSTIC_COLUMNS, [row])
    emb_path = experiment.export_embeddings(os.path.join(out_dir, "embeddings.csv"), pair, ds)
    print(f"l1={row['l1']:.6f} l2={row['l2']:.6f} rr_pairwise={row['rr_pairwise']:.6f} "
          f"rr_clusterform={row['rr_clusterform']:.6f} rr_tilde={row['rr_tilde']:.6f}")
    print(f"diagnostics: {diag_path}\nembeddings: {emb_path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ncpu", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, out_help):
        p.add_argument("--config", help="INI config file (see docs/config.md)")
        p.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--method", choices=trainer.METHODS, help="overrides [train] method")
        p.add_argument("--epochs", type=int, help="overrides [train] epochs")

    p = sub.add_parser("generate", help="write a synthetic PU dataset file")
    shared(p, "dataset file path (a .test sibling holds the held-out set)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one method and write metrics, diagnostics, checkpoint")
    shared(p, "output directory (overrides [run] out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset file")
    shared(p, "optional JSON file for the metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    shared(p, "unused")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("diagnose", help="cluster diagnostics and embedding export for a checkpoint")
    shared(p, "output directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FloatingPointError, DegenerateVectorError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
