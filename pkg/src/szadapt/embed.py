"""Exact t-SNE and scatter export for inspecting feature distributions."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

MAX_ROWS = 2000


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 500
    learning_rate: float = 200.0
    exaggeration: float = 12.0
    exaggeration_iters: int = 100
    momentum_switch: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}", "iterations")
        if not self.perplexity > 1:
            raise ConfigError(f"perplexity must exceed 1, got {self.perplexity}", "perplexity")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive", "learning_rate")


@dataclass(frozen=True, eq=False)
class Embedding2D:
    coords: np.ndarray  # (n, 2)
    subjects: np.ndarray  # (n,) str
    labels: np.ndarray  # (n,) int
    kl_history: list = field(default_factory=list)
    flagged_rows: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise DataError("embedding has non-finite coordinates")

    def __len__(self):
        return self.coords.shape[0]


def _row_entropy(d_row, beta):
    p = np.exp(-(d_row - d_row.min()) * beta)
    s = p.sum()
    p /= s
    # Shannon entropy in bits
    h = -np.sum(p * np.log2(np.maximum(p, 1e-300)))
    return p, h


def conditional_probabilities(D2, perplexity, tol=1e-5, max_steps=50):
    """Row-wise Gaussian affinities matched to ``perplexity`` by bisection.

    ``D2`` holds squared distances.  Returns ``(P, flagged)`` where each
    row of ``P`` sums to one and ``flagged`` lists rows whose entropy
    missed the target by ``tol`` or more after ``max_steps`` steps.
    """
    n = D2.shape[0]
    target = np.log2(perplexity)
    P = np.zeros((n, n))
    flagged = []
    for i in range(n):
        d = np.delete(D2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        p, h = _row_entropy(d, beta)
        for _ in range(max_steps):
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
            p, h = _row_entropy(d, beta)
        if abs(h - target) >= tol:
            flagged.append(i)
        P[i, np.arange(n) != i] = p
    return P, flagged


def _row_seed(seed, row):
    digest = hashlib.sha256(np.ascontiguousarray(row, dtype="<f8").tobytes()).digest()
    return np.random.SeedSequence([int(seed), int.from_bytes(digest[:8], "little")])


def _jitter_duplicates(X, seed):
    _, counts = np.unique(X, axis=0, return_counts=True)
    if np.all(counts == 1):
        return X
    X = X.copy()
    seen = {}
    for i in range(len(X)):
        key = X[i].tobytes()
        k = seen.get(key, 0)
        seen[key] = k + 1
        if k:
            rng = np.random.default_rng(_row_seed(seed + k, X[i]))
            X[i] = X[i] + 1e-10 * rng.standard_normal(X.shape[1])
    return X


def kl_divergence(P, Y):
    num = 1.0 / (1.0 + squareform(pdist(Y, "sqeuclidean")))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(X, cfg: TsneConfig = TsneConfig(), subjects=None, labels=None) -> Embedding2D:
    """Exact t-SNE of the rows of ``X`` into two dimensions.

    Initial positions are drawn per row from a generator keyed by the
    seed and a hash of the row, so the result does not depend on row
    order.  The per-iteration KL divergence is kept in ``kl_history``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"t-SNE input must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if n < 10:
        raise DataError(f"t-SNE needs at least 10 rows, got {n}")
    if not cfg.perplexity < (n - 1) / 3:
        raise ConfigError(f"perplexity {cfg.perplexity} too large for {n} rows; "
                          f"must be below {(n - 1) / 3:.2f}", "perplexity")
    subjects = np.asarray(subjects if subjects is not None else ["all"] * n).astype(str)
    labels = np.asarray(labels if labels is not None else np.zeros(n), dtype=np.int64)
    # Work in a canonical row order so the result is exactly equivariant
    # to permutations of the input (floating-point sums depend on order).
    order = np.lexsort(X.T[::-1])
    X = _jitter_duplicates(X[order], cfg.seed)

    D2 = squareform(pdist(X, "sqeuclidean"))
    P_cond, flagged = conditional_probabilities(D2, cfg.perplexity)
    if flagged:
        log.warning("perplexity bisection did not converge for %d rows", len(flagged))
    P = (P_cond + P_cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)
    P /= P.sum()

    Y = np.vstack([1e-4 * np.random.default_rng(_row_seed(cfg.seed, row)).standard_normal(2)
                   for row in X])
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    for it in range(cfg.iterations):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = 0.5 if it < cfg.momentum_switch else 0.8
        num = 1.0 / (1.0 + squareform(pdist(Y, "sqeuclidean")))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        mask = P > 0
        history.append(float(np.sum(P[mask] * np.log(P[mask] / Q[mask]))))
    coords = np.empty_like(Y)
    coords[order] = Y
    flagged = sorted(int(order[i]) for i in flagged)
    return Embedding2D(coords=coords, subjects=subjects, labels=labels,
                       kl_history=history, flagged_rows=tuple(flagged))


def stratified_subsample(subjects, labels, max_rows=MAX_ROWS, seed=0):
    """Row indices keeping each (subject, label) stratum's share of rows."""
    subjects = np.asarray(subjects).astype(str)
    labels = np.asarray(labels)
    n = len(subjects)
    if n <= max_rows:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    keys = sorted(set(zip(subjects.tolist(), labels.tolist())))
    picks = []
    for s, y in keys:
        rows = np.flatnonzero((subjects == s) & (labels == y))
        k = max(1, int(np.floor(len(rows) * max_rows / n)))
        picks.append(np.sort(rng.choice(rows, size=k, replace=False)))
    return np.sort(np.concatenate(picks))[:max_rows]


def silhouette(Y, groups):
    """Mean silhouette coefficient of points ``Y`` under ``groups``."""
    groups = np.asarray(groups)
    D = squareform(pdist(np.asarray(Y, dtype=np.float64)))
    uniq = np.unique(groups)
    if len(uniq) < 2:
        raise DataError("silhouette needs at least two groups")
    scores = np.zeros(len(groups))
    for i in range(len(groups)):
        own = groups == groups[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = D[i, own].sum() / n_own
        b = min(D[i, groups == g].mean() for g in uniq if g != groups[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def write_scatter_csv(emb: Embedding2D, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,subject,label\n")
        for (x, y), s, c in zip(emb.coords, emb.subjects, emb.labels):
            fh.write(f"{float(x)!r},{float(y)!r},{s},{int(c)}\n")


def read_scatter_csv(path) -> Embedding2D:
    from .errors import ParseError
    coords, subjects, labels = [], [], []
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "x,y,subject,label":
            raise ParseError("expected header 'x,y,subject,label'", 1, path)
        for lineno, line in enumerate(fh, start=2):
            cells = line.strip().split(",")
            if len(cells) != 4:
                raise ParseError("expected 4 fields", lineno, path)
            try:
                coords.append((float(cells[0]), float(cells[1])))
                labels.append(int(cells[3]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno, path) from None
            subjects.append(cells[2])
    return Embedding2D(np.array(coords, dtype=np.float64).reshape(-1, 2),
                       np.array(subjects), np.array(labels, dtype=np.int64))


def export_scatter(emb: Embedding2D, path, title=None):
    """Write an SVG scatter (colour = subject, marker = class) and a CSV sidecar.

    Returns ``(svg_path, csv_path)``; the CSV sits next to the SVG with the
    same stem.
    """
    from .plotting import scatter_figure, save_figure

    if len(emb) == 0:
        raise DataError("nothing to plot: embedding has no points")
    path = _svg_path(path)
    csv_path = path.with_suffix(".csv")
    try:
        fig = scatter_figure(emb, title=title)
        save_figure(fig, path)
        write_scatter_csv(emb, csv_path)
    except OSError as exc:
        raise DataError(f"{path}: cannot write scatter output: {exc}") from exc
    return path, csv_path


def _svg_path(path):
    from pathlib import Path
    path = Path(path)
    return path if path.suffix == ".svg" else path.with_suffix(".svg")
