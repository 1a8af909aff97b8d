"""Command-line entry point.

Each subcommand is one pipeline stage that reads and writes plain files::

    szadapt synth    --out cohort/
    szadapt features --in cohort/ --out feats/
    szadapt adapt    --features feats/ --out adapt.szad
    szadapt train    --features feats/ --target S01 --n 1 --scheme CS --out clf.szad
    szadapt eval     --features feats/ --out results/
    szadapt embed    --features feats/ [--model adapt.szad] --out scatter.svg
    szadapt report   --results results/results.csv --out results/

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adaptation import encode, train_adaptation
from .config import RunConfig, load_config, threads_from_env
from .errors import ConfigError, DataError, SzadError
from .evaluation import (NShotPlan, adapt_for, auc, build_nshot, markdown_table,
                         read_results_csv, run_experiment, write_results_csv)
from .features import (feature_matrix, fit_normalizer, read_feature_matrix,
                       write_feature_matrix)
from .gbtree import WeightedDataset, fit_gbt, gbt_predict
from .modelio import load_model, save_model
from .signals import generate_synthetic_cohort, read_recording, segment, write_recording

log = logging.getLogger("szadapt")

FEATURE_SUFFIX = ".features.csv"


class UsageError(SzadError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="seed for every stochastic stage")
    p.add_argument("--config", type=Path, default=None, help="key = value config file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for trials (default: $SZAD_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="szadapt", description="Subject-invariant seizure detection "
                     "via adversarial domain adaptation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("features", parents=[common], help="window recordings and extract features")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("adapt", parents=[common], help="train the adaptation networks")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--history", type=Path, default=None)
    p.add_argument("--figure", type=Path, default=None)

    p = sub.add_parser("train", parents=[common], help="fit a classifier for one n-shot plan")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scheme", default="CS")
    p.add_argument("--adapt-model", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="run the n-shot experiment")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("embed", parents=[common], help="t-SNE scatter of features or latents")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", parents=[common], help="render a results CSV")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    threads = args.threads if args.threads is not None else threads_from_env(cfg.threads)
    cfg = replace(cfg, threads=threads)
    return cfg.validate()


def _load_features(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    paths = sorted(directory.glob("*" + FEATURE_SUFFIX))
    if not paths:
        raise DataError(f"{directory}: no *{FEATURE_SUFFIX} files")
    return [read_feature_matrix(p) for p in paths]


def cmd_synth(args, cfg):
    args.out.mkdir(parents=True, exist_ok=True)
    for rec in generate_synthetic_cohort(cfg.cohort):
        write_recording(rec, args.out / f"{rec.subject_id}.csv")
    print(f"wrote {cfg.cohort.n_subjects} recordings to {args.out}")


def cmd_features(args, cfg):
    if not args.inp.is_dir():
        raise DataError(f"{args.inp}: not a directory")
    paths = sorted(p for p in args.inp.glob("*.csv") if not p.name.endswith(FEATURE_SUFFIX))
    if not paths:
        raise DataError(f"{args.inp}: no recording files")
    args.out.mkdir(parents=True, exist_ok=True)
    for p in paths:
        rec = read_recording(p)
        M = feature_matrix(segment(rec, cfg.eval.window_seconds), rec.sample_rate_hz)
        write_feature_matrix(M, args.out / f"{M.subject_id}{FEATURE_SUFFIX}")
        print(f"{M.subject_id}: {len(M)} windows, {M.dim} features")


def write_history_csv(model, path):
    rows = ([model.initial] if model.initial is not None else []) + list(model.history)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,adv_loss,rec_loss,sd_holdout_acc,jsd_estimate\n")
        for r in rows:
            values = (r.adv_loss, r.rec_loss, r.sd_holdout_acc, r.jsd_estimate)
            fh.write(f"{r.epoch}," + ",".join(repr(float(v)) for v in values) + "\n")


def cmd_adapt(args, cfg):
    from .plotting import history_figure, save_figure

    mats = _load_features(args.features)
    acfg = replace(cfg.adaptation, n_subjects=len(mats))
    model = train_adaptation(mats, acfg)
    save_model(args.out, model)
    history = args.history or args.out.with_suffix(".history.csv")
    figure = args.figure or args.out.with_suffix(".history.svg")
    write_history_csv(model, history)
    save_figure(history_figure(model.history), figure)
    last = model.history[-1]
    print(f"saved {args.out}; final held-out SD accuracy {last.sd_holdout_acc:.3f}, "
          f"divergence {last.jsd_estimate:.4f}")


def cmd_train(args, cfg):
    mats = _load_features(args.features)
    plan = NShotPlan(args.target, args.n, args.scheme, cfg.eval.source_weight,
                     cfg.eval.target_weight)
    split = build_nshot(mats, plan)
    by_id = {m.subject_id: m for m in mats}
    if plan.scheme == "CS":
        if args.adapt_model is not None:
            amodel = load_model(args.adapt_model)
        else:
            amodel = adapt_for(mats, split, cfg.adaptation, cfg.seed)

        def rows_of(sid, rows):
            return encode(amodel, sid, by_id[sid].X[rows]), by_id[sid].labels[rows]
    else:
        def rows_of(sid, rows):
            return by_id[sid].X[rows], by_id[sid].labels[rows]
    parts = [rows_of(sid, rows) for sid, rows in split.train_rows.items()]
    X = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    w = np.concatenate([np.full(len(rows), split.train_weights[sid])
                        for sid, rows in split.train_rows.items()])
    model = fit_gbt(WeightedDataset(X, y, w), cfg.gbt)
    save_model(args.out, model)
    test_X, test_y = rows_of(plan.target, split.test_rows)
    print(f"saved {args.out}; test AUC {auc(gbt_predict(model, test_X), test_y):.4f}")


def _write_report(report, out, cfg_lines):
    from .plotting import auc_figure, save_figure

    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(report, out / "results.csv")
    table = markdown_table(report, cfg_lines)
    (out / "report.md").write_text(table, encoding="utf-8")
    save_figure(auc_figure(report), out / "auc.svg")
    return table


def cmd_eval(args, cfg):
    mats = _load_features(args.features)
    acfg = replace(cfg.adaptation, n_subjects=len(mats))
    report = run_experiment(
        mats, ns=cfg.eval.ns, schemes=cfg.eval.schemes, trials=cfg.eval.trials,
        seeds=cfg.trial_seeds(), adapt_cfg=acfg, gbt_cfg=cfg.gbt,
        source_weight=cfg.eval.source_weight, target_weight=cfg.eval.target_weight,
        threads=cfg.threads)
    print(_write_report(report, args.out, cfg.lines()), end="")


def cmd_embed(args, cfg):
    from .embed import export_scatter, stratified_subsample, tsne

    mats = _load_features(args.features)
    if args.model is not None:
        model = load_model(args.model)
        X = np.vstack([encode(model, m.subject_id, m) for m in mats])
        what = "adapted latents"
    else:
        X = np.vstack([m.X for m in mats])
        X = fit_normalizer(X).apply(X)
        what = "raw features"
    subjects = np.concatenate([[m.subject_id] * len(m) for m in mats])
    labels = np.concatenate([m.labels for m in mats])
    keep = stratified_subsample(subjects, labels, seed=cfg.tsne.seed)
    emb = tsne(X[keep], cfg.tsne, subjects[keep], labels[keep])
    t = cfg.tsne
    title = (f"t-SNE of {what} (perplexity {t.perplexity:g}, {t.iterations} iterations, "
             f"learning rate {t.learning_rate:g})")
    svg, csv = export_scatter(emb, args.out, title=title)
    print(f"wrote {svg} and {csv}; {title}")


def cmd_report(args, cfg):
    if not args.results.is_file():
        raise DataError(f"{args.results}: no such file")
    report = read_results_csv(args.results)
    print(_write_report(report, args.out, ()), end="")


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "adapt": cmd_adapt,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except SzadError as exc:
        kind = "usage" if isinstance(exc, (UsageError, ConfigError)) else "error"
        print(f"szadapt: {kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"szadapt: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return DataError.exit_code
    except OSError as exc:
        print(f"szadapt: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
