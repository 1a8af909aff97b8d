"""Block-wise n-shot evaluation.

A subject's windows are cut into blocks, each holding one seizure run and
the non-seizure run that follows it.  In n-shot evaluation the first
``n`` blocks of the target subject may be used for training and the rest
are test data.  Three training schemes are supported:

``SS``
    subject-specific: boosted trees on the target's raw training blocks.
``CS``
    cross-subject: adversarially adapted latents of every source subject
    (sample weight 0.01) plus the target's training blocks (weight 1).
``RAW``
    like ``CS`` but on raw features, without adaptation; a baseline.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .adaptation import AdaptationConfig, encode, train_adaptation
from .errors import DataError, SchemeError, SplitError
from .features import FeatureMatrix
from .gbtree import GbtConfig, WeightedDataset, fit_gbt, gbt_predict

log = logging.getLogger(__name__)

SCHEMES = ("SS", "CS", "RAW")


@dataclass(frozen=True)
class Block:
    start: int
    stop: int  # exclusive

    @property
    def indices(self):
        return np.arange(self.start, self.stop)

    def __len__(self):
        return self.stop - self.start


def block_partition(labels) -> list[Block]:
    """Split a window label sequence into seizure blocks.

    A block starts at each seizure onset and runs until the next onset.
    Non-seizure windows before the first onset join the first block.
    """
    y = np.asarray(labels).astype(bool)
    onsets = np.flatnonzero(y & ~np.concatenate([[False], y[:-1]]))
    if onsets.size == 0:
        raise DataError("no seizure windows; cannot form blocks")
    starts = onsets.copy()
    starts[0] = 0
    stops = np.append(onsets[1:], len(y))
    return [Block(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class NShotPlan:
    target: str
    n: int
    scheme: str = "CS"
    source_weight: float = 0.01
    target_weight: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise SchemeError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n < 0:
            raise SplitError(f"n must be non-negative, got {self.n}")
        if self.scheme == "SS" and self.n == 0:
            raise SchemeError("subject-specific training needs n >= 1")
        if not (self.source_weight > 0 and self.target_weight > 0):
            raise DataError("sample weights must be positive")


@dataclass
class NShotSplit:
    """Row selections for one plan; subject ids map to window indices."""

    plan: NShotPlan
    train_rows: dict
    train_weights: dict
    test_rows: np.ndarray
    adapt_rows: dict

    def check_no_leakage(self):
        test = set(self.test_rows.tolist())
        target = self.plan.target
        if test & set(self.train_rows.get(target, np.array([], int)).tolist()):
            raise SplitError(f"train and test windows overlap for {target}")
        if self.plan.n > 0 and test & set(self.adapt_rows[target].tolist()):
            raise SplitError(f"adaptation saw test windows of {target}")


def build_nshot(cohort, plan: NShotPlan) -> NShotSplit:
    """Select training, test and adaptation rows for ``plan``.

    Test rows are the target's blocks after the first ``n``.  With
    ``n == 0`` sources keep full weight (there is no target data to
    balance against) and the target's unlabeled windows all take part in
    adaptation, since its encoder cannot be trained on nothing.
    """
    mats = {m.subject_id: m for m in cohort}
    if plan.target not in mats:
        raise DataError(f"target {plan.target!r} not in cohort {sorted(mats)}")
    blocks = block_partition(mats[plan.target].labels)
    if plan.n >= len(blocks):
        raise SplitError(f"{plan.target} has {len(blocks)} blocks; "
                         f"{plan.n}-shot leaves no test block")
    n_train = blocks[plan.n - 1].stop if plan.n > 0 else 0
    n_total = len(mats[plan.target])
    target_train = np.arange(0, n_train)
    test = np.arange(n_train, blocks[-1].stop)

    train_rows, weights = {}, {}
    if plan.n > 0:
        train_rows[plan.target] = target_train
        weights[plan.target] = plan.target_weight
    if plan.scheme != "SS":
        w_src = plan.source_weight if plan.n > 0 else 1.0
        for sid, m in mats.items():
            if sid != plan.target:
                train_rows[sid] = np.arange(len(m))
                weights[sid] = w_src
    adapt_rows = {sid: np.arange(len(m)) for sid, m in mats.items()}
    adapt_rows[plan.target] = target_train if plan.n > 0 else np.arange(n_total)
    split = NShotSplit(plan, train_rows, weights, test, adapt_rows)
    split.check_no_leakage()
    return split


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined unless both classes are present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# -- experiment runner ----------------------------------------------------

@dataclass(frozen=True)
class TrialResult:
    subject: str
    scheme: str
    n: int
    trial: int
    seed: int
    auc: float | None  # None marks an inapplicable cell


@dataclass
class ExperimentReport:
    results: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def subjects(self):
        return sorted({r.subject for r in self.results})

    def _values(self, subject, scheme, n):
        return [r.auc for r in self.results
                if r.subject == subject and r.scheme == scheme and r.n == n]

    def cell(self, subject, scheme, n):
        """``(mean, population std)`` over trials, or None when N/A."""
        vals = self._values(subject, scheme, n)
        if not vals or any(v is None for v in vals):
            return None
        return float(np.mean(vals)), float(np.std(vals))

    def per_trial_average(self, scheme, n):
        out = []
        for t in range(len(self.seeds)):
            vals = [r.auc for r in self.results if r.scheme == scheme and r.n == n
                    and r.trial == t and r.auc is not None]
            if vals:
                out.append(float(np.mean(vals)))
        return out

    def average(self, scheme, n):
        vals = self.per_trial_average(scheme, n)
        if not vals:
            return None
        return float(np.mean(vals)), float(np.std(vals))


def _fit_and_score(train_X, train_y, train_w, test_X, test_y, gbt_cfg):
    model = fit_gbt(WeightedDataset(train_X, train_y, train_w), gbt_cfg)
    return auc(gbt_predict(model, test_X), test_y)


def _assemble(split, blocks_of):
    Xs, ys, ws = [], [], []
    for sid, rows in split.train_rows.items():
        X, y = blocks_of(sid, rows)
        Xs.append(X)
        ys.append(y)
        ws.append(np.full(len(rows), split.train_weights[sid]))
    return np.vstack(Xs), np.concatenate(ys), np.concatenate(ws)


def run_plan(cohort, split: NShotSplit, gbt_cfg, adapt_model=None):
    """AUC of one plan; ``adapt_model`` is required for ``CS``."""
    mats = {m.subject_id: m for m in cohort}
    target = split.plan.target
    if split.plan.scheme == "CS":
        if adapt_model is None:
            raise DataError("cross-subject plans need an adaptation model")

        def rows_of(sid, rows):
            return encode(adapt_model, sid, mats[sid].X[rows]), mats[sid].labels[rows]
    else:
        def rows_of(sid, rows):
            return mats[sid].X[rows], mats[sid].labels[rows]
    X, y, w = _assemble(split, rows_of)
    test_X, test_y = rows_of(target, split.test_rows)
    return _fit_and_score(X, y, w, test_X, test_y, gbt_cfg)


def adapt_for(cohort, split: NShotSplit, adapt_cfg: AdaptationConfig, seed):
    """Train adaptation on the windows ``split`` allows it to see."""
    visible = [m.take(split.adapt_rows[m.subject_id]) for m in cohort]
    cfg = replace(adapt_cfg, n_subjects=len(cohort), seed=int(seed))
    return train_adaptation(visible, cfg)


def _plan_seed(trial_seed, subject_index, n):
    seq = np.random.SeedSequence([int(trial_seed), int(subject_index), int(n)])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def run_trial(cohort, ns, schemes, trial, seed, adapt_cfg, gbt_cfg,
              source_weight=0.01, target_weight=1.0, targets=None):
    results = []
    subject_ids = [m.subject_id for m in cohort]
    for si, target in enumerate(subject_ids):
        if targets is not None and target not in targets:
            continue
        n_blocks = len(block_partition(cohort[si].labels))
        for n in ns:
            model = None
            for scheme in schemes:
                if scheme == "SS" and n == 0:
                    continue
                if n >= n_blocks:
                    results.append(TrialResult(target, scheme, n, trial, seed, None))
                    continue
                plan = NShotPlan(target, n, scheme, source_weight=source_weight,
                                 target_weight=target_weight)
                split = build_nshot(cohort, plan)
                if scheme == "CS" and model is None:
                    model = adapt_for(cohort, split, adapt_cfg, _plan_seed(seed, si, n))
                try:
                    value = run_plan(cohort, split, gbt_cfg, model)
                except DataError as exc:
                    raise DataError(f"{target} {scheme} {n}-shot: {exc}") from exc
                log.info("trial %d %s %s %d-shot AUC %.3f", trial, target, scheme, n, value)
                results.append(TrialResult(target, scheme, n, trial, seed, value))
    return results


def run_experiment(cohort, ns=(0, 1, 2, 3), schemes=("SS", "CS"), trials=5,
                   seeds=None, adapt_cfg=None, gbt_cfg=None, source_weight=0.01,
                   target_weight=1.0, threads=1, targets=None, config=None) -> ExperimentReport:
    """Repeat adaptation and classification over seeded trials."""
    cohort = list(cohort)
    if len(cohort) < 2:
        raise DataError("an experiment needs at least two subjects")
    for s in schemes:
        if s not in SCHEMES:
            raise SchemeError(f"unknown scheme {s!r}")
    seeds = list(seeds) if seeds is not None else list(range(trials))
    if len(seeds) != trials:
        raise DataError(f"{trials} trials but {len(seeds)} seeds")
    adapt_cfg = adapt_cfg or AdaptationConfig(n_subjects=len(cohort))
    gbt_cfg = gbt_cfg or GbtConfig()

    def one(t):
        return run_trial(cohort, ns, schemes, t, seeds[t], adapt_cfg, gbt_cfg,
                         source_weight, target_weight, targets)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(one, range(trials)))
    else:
        per_trial = [one(t) for t in range(trials)]
    report = ExperimentReport(seeds=seeds, config=dict(config or {}))
    for rs in per_trial:
        report.results.extend(rs)
    report.results.sort(key=lambda r: (r.subject, SCHEMES.index(r.scheme), r.n, r.trial))
    return report


# -- report output --------------------------------------------------------

def write_results_csv(report: ExperimentReport, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("subject,scheme,n,trial,auc\n")
        for r in report.results:
            value = "NA" if r.auc is None else repr(float(r.auc))
            fh.write(f"{r.subject},{r.scheme},{r.n},{r.trial},{value}\n")


def read_results_csv(path) -> ExperimentReport:
    from .errors import ParseError
    results = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "subject,scheme,n,trial,auc":
            raise ParseError("expected header 'subject,scheme,n,trial,auc'", 1, path)
        for lineno, line in enumerate(fh, start=2):
            cells = line.strip().split(",")
            if cells == [""]:
                continue
            if len(cells) != 5:
                raise ParseError("expected 5 fields", lineno, path)
            try:
                value = None if cells[4] == "NA" else float(cells[4])
                results.append(TrialResult(cells[0], cells[1], int(cells[2]),
                                           int(cells[3]), -1, value))
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
    n_trials = 1 + max((r.trial for r in results), default=-1)
    return ExperimentReport(results=results, seeds=list(range(n_trials)))


def _fmt(cell):
    return "N/A" if cell is None else f"{cell[0]:.3f} ± {cell[1]:.3f}"


def table_columns(report: ExperimentReport):
    ns = sorted({r.n for r in report.results})
    present = {(r.scheme, r.n) for r in report.results}
    cols = []
    for n in ns:
        for scheme in SCHEMES:
            if (scheme, n) in present:
                cols.append((scheme, n))
    return cols


def markdown_table(report: ExperimentReport, config_lines=()):
    """AUC table with one row per subject plus the average row."""
    cols = table_columns(report)
    head = "| Subject | " + " | ".join(f"{n}-shot {s}" for s, n in cols) + " |"
    rule = "|" + "---|" * (len(cols) + 1)
    lines = [head, rule]
    for subject in report.subjects():
        cells = [_fmt(report.cell(subject, s, n)) for s, n in cols]
        lines.append(f"| {subject} | " + " | ".join(cells) + " |")
    avg = [_fmt(report.average(s, n)) for s, n in cols]
    lines.append("| Average | " + " | ".join(avg) + " |")
    out = ["# AUC by subject, scheme and number of training blocks", "",
           f"Mean ± population standard deviation over {len(report.seeds)} trials.",
           "", *lines]
    if config_lines:
        out += ["", "## Resolved configuration", "", "```", *config_lines, "```"]
    return "\n".join(out) + "\n"
