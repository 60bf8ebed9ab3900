"""Command-line entry point: ``drlood <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure,
1 anything else.
"""
import argparse
import configparser
import csv
import io
import logging
import os
import sys

import numpy as np

from drlood import datagen
from drlood import detectors as det
from drlood.auxiliary import load_drl, load_pretrained, save_drl
from drlood.checkpoint import CheckpointError, save_checkpoint, save_metadata
from drlood.errors import ConfigError, DatasetParseError, NumericError
from drlood.expcli import config as config_mod
from drlood.expcli import experiments as ex
from drlood.metrics import write_metrics

log = logging.getLogger("drlood")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _load_config(args):
    """The config file (or defaults) with ``--set section.key=value`` applied before resolution."""
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.set:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        for item in args.set:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not section.key=value")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, name.strip(), value.strip())
        buf = io.StringIO()
        parser.write(buf)
        text = buf.getvalue()
    return config_mod.from_text(text)


def _seed(args, cfg):
    return cfg.experiment.seed if args.seed is None else args.seed


def _trial(args, cfg):
    seed = _seed(args, cfg)
    trial = ex.Trial(cfg, seed)
    if getattr(args, "model", None):
        try:
            drl = load_drl(args.model)
        except FileNotFoundError:
            drl = None
        trial._pretrained = drl.pretrained if drl else load_pretrained(args.model)
        if drl is not None:
            trial._drl[(drl.epsilon, drl.sigma_Z.kind)] = drl
            cfg.drl.epsilon, cfg.drl.sigma = drl.epsilon, drl.sigma_Z.kind
    return trial


def cmd_train_pretrained(args, cfg):
    trial = _trial(args, cfg)
    model = trial.pretrained
    save_checkpoint(model.net, os.path.join(args.out, "pretrained.ckpt"))
    save_metadata(os.path.join(args.out, "pretrained.meta"), model.num_classes, model.input_dim,
                  trial.seed, model.sigma_D)
    data = trial.data
    datagen.save_dataset(data.train, os.path.join(args.out, "train.csv"))
    datagen.save_dataset(data.test, os.path.join(args.out, "test.csv"))
    for kind, ood in data.oods.items():
        datagen.save_dataset(ood, os.path.join(args.out, f"ood_{kind}.csv"))
    _write_losses(os.path.join(args.out, "losses.csv"), model.losses)


def cmd_train_aux(args, cfg):
    trial = _trial(args, cfg)
    model = trial.drl()
    save_drl(model, args.out)
    _write_losses(os.path.join(args.out, "losses.csv"), model.losses)


def _write_losses(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def cmd_score(args, cfg):
    trial = _trial(args, cfg)
    samples = []
    X_id = trial.data.test.features
    for name in cfg.detectors.list:
        id_scores = trial.score(name, X_id)
        for kind, ood in trial.data.oods.items():
            samples += det.scored_samples(f"{name}/{kind}", id_scores, trial.score(name, ood.features))
    det.write_scores(samples, os.path.join(args.out, "scores.csv"))


def cmd_eval(args, cfg):
    trial = _trial(args, cfg)
    rows = []
    for name in cfg.detectors.list:
        rows += trial.evaluate(name)
    write_metrics(rows, os.path.join(args.out, "metrics.csv"))


def _experiment(kind):
    def run(args, cfg):
        record = ex.EXPERIMENTS[kind](cfg, args.out)
        for row in record.summary:
            log.info("%-22s %-13s AUROC %.4f +- %.4f", row["detector"], row["dataset"],
                     row["auroc_mean"], row["auroc_std"])
    return run


def cmd_gradcheck(args, cfg):
    from drlood import gradcheck as gc
    results = gc.run_suite(np.random.default_rng(_seed(args, cfg)), n_cases=args.cases)
    with open(os.path.join(args.out, "gradcheck.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "max_rel_error", "max_abs_error", "n_checked", "passed"])
        for r in results:
            w.writerow([r.name, repr(r.max_rel_error), repr(r.max_abs_error), r.n_checked, int(r.passed)])
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")


COMMANDS = {
    "train-pretrained": (cmd_train_pretrained, "train and save the pretrained classifier"),
    "train-aux": (cmd_train_aux, "train the auxiliary network against a frozen pretrained one"),
    "score": (cmd_score, "write per-sample detector scores"),
    "eval": (cmd_eval, "evaluate the configured detectors for one seed"),
    "compare": (_experiment("compare"), "multi-trial detector comparison"),
    "sweep-eps": (_experiment("sweep-eps"), "AUROC across the epsilon grid"),
    "sigma-study": (_experiment("sigma-study"), "AUROC across component covariance kinds"),
    "ablate": (_experiment("ablate"), "D, C and D+C arms with reliability data"),
    "ensemble": (_experiment("ensemble"), "deep ensembles of growing size against DRL"),
    "offset-sweep": (_experiment("offset-sweep"), "detectors from near to far shifted-blob OOD"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every analytic gradient"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="drlood", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config file (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key; repeatable")
        if name in ("train-pretrained", "train-aux", "score", "eval", "gradcheck"):
            p.add_argument("--seed", type=int, help="trial seed (default: experiment.seed)")
        if name in ("train-aux", "score", "eval"):
            p.add_argument("--model", help="directory written by train-pretrained or train-aux")
        if name == "gradcheck":
            p.add_argument("--cases", type=int, default=10, help="random instances per check")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        os.makedirs(args.out, exist_ok=True)
        ex.write_resolved(cfg, args.out)
        COMMANDS[args.command][0](args, cfg)
    except (ConfigError, DatasetParseError, CheckpointError) as exc:
        print(f"drlood: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"drlood: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"drlood: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
