"""Per-window seizure biomarkers and z-score normalisation.

Each channel of a window yields eleven values, in this order::

    LLN, Pow, Var, delta, theta, alpha, beta, gamma1, gamma2, gamma3, ripple

Multichannel windows concatenate the per-channel blocks channel-major.
Band powers come from a raw one-sided periodogram scaled so that the DC
bin, all band bins and the Nyquist bin together sum to :func:`total_power`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BandError, ParseError, ShapeError, SizeError
from .signals import Window

BANDS = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma1", 30.0, 50.0),
    ("gamma2", 50.0, 80.0),
    ("gamma3", 80.0, 150.0),
    ("ripple", 150.0, 250.0),
)
FEATURE_NAMES = ("lln", "pow", "var") + tuple(name for name, _, _ in BANDS)
N_FEATURES = len(FEATURE_NAMES)


def _as_window(x, d, minimum):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1] if x.ndim else 0
    if d is None:
        d = n
    if d != n:
        raise SizeError(f"window size d={d} does not match {n} samples")
    if d < minimum:
        raise SizeError(f"need at least {minimum} samples, got {d}")
    return x, d


def line_length(x, d=None):
    """Mean absolute first difference, normalised by the window size."""
    x, d = _as_window(x, d, 2)
    return np.abs(np.diff(x, axis=-1)).sum(axis=-1) / d


def total_power(x, d=None):
    x, d = _as_window(x, d, 1)
    return np.mean(x * x, axis=-1)


def variance(x, d=None):
    x, d = _as_window(x, d, 1)
    mu = x.mean(axis=-1, keepdims=True)
    return np.mean((x - mu) ** 2, axis=-1)


def periodogram(x):
    """One-sided power per DFT bin; sums to the mean square of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    p = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / (d * d)
    if d % 2 == 0:
        p[..., 1:-1] *= 2.0
    else:
        p[..., 1:] *= 2.0
    return p


def _check_band(lo, hi, fs):
    if not lo < hi:
        raise BandError(f"band lower edge {lo} must be below upper edge {hi}")
    if hi > fs / 2:
        raise BandError(f"band edge {hi} Hz exceeds Nyquist {fs / 2} Hz")
    if lo < 0:
        raise BandError(f"negative band edge {lo}")


def band_power(x, d=None, fs=500.0, band=(1.0, 4.0)):
    """Periodogram power in the half-open band ``[lo, hi)``."""
    x, d = _as_window(x, d, 2)
    lo, hi = band
    _check_band(lo, hi, fs)
    freqs = np.arange(d // 2 + 1) * fs / d
    mask = (freqs >= lo) & (freqs < hi)
    return periodogram(x)[..., mask].sum(axis=-1)


def window_features(samples, fs):
    """Feature block for an array of shape (..., d); returns (..., 11)."""
    x, d = _as_window(samples, None, 2)
    for _, lo, hi in BANDS:
        _check_band(lo, hi, fs)
    out = np.empty(x.shape[:-1] + (N_FEATURES,))
    out[..., 0] = line_length(x)
    out[..., 1] = total_power(x)
    out[..., 2] = variance(x)
    p = periodogram(x)
    freqs = np.arange(d // 2 + 1) * fs / d
    for k, (_, lo, hi) in enumerate(BANDS):
        mask = (freqs >= lo) & (freqs < hi)
        out[..., 3 + k] = p[..., mask].sum(axis=-1)
    return out


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: int
    subject_id: str


def extract_features(w: Window, fs) -> FeatureVector:
    values = window_features(np.atleast_2d(w.samples), fs).reshape(-1)
    return FeatureVector(values=values, label=int(w.label), subject_id=w.subject_id)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Feature rows of one subject in window order."""

    subject_id: str
    X: np.ndarray  # (n, F)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {X.shape}")
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if labels.shape[0] != X.shape[0]:
            raise ShapeError(
                f"{labels.shape[0]} labels for {X.shape[0]} feature rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def take(self, rows):
        return FeatureMatrix(self.subject_id, self.X[rows], self.labels[rows])

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.labels, other.labels))


def feature_matrix(windows, fs) -> FeatureMatrix:
    """Stack the features of a subject's windows into one matrix."""
    if not windows:
        raise SizeError("no windows to extract features from")
    subject = windows[0].subject_id
    samples = np.stack([np.atleast_2d(w.samples) for w in windows])
    X = window_features(samples, fs).reshape(len(windows), -1)
    labels = np.array([w.label for w in windows], dtype=np.int8)
    return FeatureMatrix(subject, X, labels)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ShapeError(
                f"normalizer expects {self.dim} columns, got shape {X.shape}")
        return (X - self.mean) / self.std


def fit_normalizer(train) -> Normalizer:
    """Per-column z-score statistics.

    ``train`` is a matrix, a :class:`FeatureMatrix` or a sequence of them.
    Columns with a standard deviation below 1e-12 keep a unit scale.
    """
    if isinstance(train, FeatureMatrix):
        X = train.X
    elif isinstance(train, np.ndarray):
        X = train
    else:
        parts = [m.X if isinstance(m, FeatureMatrix) else np.asarray(m)
                 for m in train]
        dims = {p.shape[1] for p in parts}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent feature dimensions {sorted(dims)}")
        X = np.vstack(parts)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise SizeError("need at least two rows to fit a normalizer")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return Normalizer(mean=mean, std=std)


def apply(norm: Normalizer, M):
    if isinstance(M, FeatureMatrix):
        return FeatureMatrix(M.subject_id, norm.apply(M.X), M.labels)
    return norm.apply(M)


def write_feature_matrix(M: FeatureMatrix, path) -> None:
    table = np.column_stack([M.X, M.labels.astype(np.float64)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"subject,{M.subject_id},dim,{M.dim}\n")
        np.savetxt(fh, table, fmt=["%.17g"] * M.dim + ["%d"], delimiter=",")


def read_feature_matrix(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if len(header) != 4 or header[0] != "subject" or header[2] != "dim":
            raise ParseError("expected header 'subject,<id>,dim,<F>'", 1, path)
        try:
            dim = int(header[3])
        except ValueError:
            raise ParseError("feature dimension is not an integer", 1, path) from None
        rows, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != dim + 1:
                raise ParseError(
                    f"expected {dim + 1} fields, found {len(cells)}", lineno, path)
            try:
                rows.append([float(c) for c in cells[:-1]])
            except ValueError:
                raise ParseError("non-numeric feature value", lineno, path) from None
            if cells[-1] not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {cells[-1]!r}",
                                 lineno, path)
            labels.append(int(cells[-1]))
    X = np.array(rows, dtype=np.float64).reshape(-1, dim)
    return FeatureMatrix(header[1], X, np.array(labels, dtype=np.int8))
