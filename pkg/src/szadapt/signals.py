"""Recordings, windowing and the synthetic multi-subject cohort.

A :class:`Recording` holds one subject's multichannel signal with a
per-sample seizure annotation.  :func:`segment` cuts it into fixed-size
non-overlapping windows; :func:`generate_synthetic_cohort` stands in for
clinical data with a controllable amount of inter-subject shift.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SizeError

# Background spectrum knee; below it the noise is roughly flat.
KNEE_HZ = 10.0
BURST_BAND_HZ = (60.0, 200.0)
BURST_WIDTH_HZ = 20.0
INTERICTAL_EVENT_S = 0.25


@dataclass(frozen=True, eq=False)
class Recording:
    subject_id: str
    sample_rate_hz: float
    channels: np.ndarray  # (C, T)
    labels: np.ndarray  # (T,) of {0, 1}

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        if channels.ndim == 1:
            channels = channels[None, :]
        labels = np.asarray(self.labels)
        if channels.ndim != 2 or channels.shape[0] < 1:
            raise ConfigError("recording needs at least one channel", "channels")
        if not self.sample_rate_hz > 0:
            raise ConfigError(
                f"sample rate must be positive, got {self.sample_rate_hz}",
                "sample_rate_hz")
        if labels.shape != (channels.shape[1],):
            raise SizeError(
                f"labels length {labels.shape} does not match "
                f"{channels.shape[1]} samples")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ConfigError("labels must be 0 or 1", "labels")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "labels", labels.astype(np.int8))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def n_channels(self):
        return self.channels.shape[0]

    @property
    def n_samples(self):
        return self.channels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and self.sample_rate_hz == other.sample_rate_hz
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class Window:
    samples: np.ndarray  # (C, d)
    label: int
    subject_id: str
    index: int


def window_size(sample_rate_hz, window_seconds):
    return int(round(sample_rate_hz * window_seconds))


def segment(rec: Recording, window_seconds: float = 1.0) -> list[Window]:
    """Cut ``rec`` into consecutive non-overlapping windows.

    The trailing partial window is dropped.  A window is labelled seizure
    when at least half of its samples are annotated as seizure.
    """
    if not window_seconds > 0:
        raise ConfigError("window_seconds must be positive", "window_seconds")
    d = window_size(rec.sample_rate_hz, window_seconds)
    if d < 1:
        raise ConfigError("window shorter than one sample", "window_seconds")
    if d > rec.n_samples:
        raise SizeError(
            f"window of {d} samples exceeds recording length {rec.n_samples}")
    n = rec.n_samples // d
    data = rec.channels[:, : n * d].reshape(rec.n_channels, n, d)
    seizure_counts = rec.labels[: n * d].reshape(n, d).sum(axis=1, dtype=np.int64)
    labels = (2 * seizure_counts >= d).astype(int)
    return [
        Window(samples=data[:, k, :], label=int(labels[k]),
               subject_id=rec.subject_id, index=k)
        for k in range(n)
    ]


@dataclass(frozen=True)
class CohortConfig:
    """Parameters of the synthetic cohort.

    ``duration_s`` is the length of one block (a seizure followed by its
    non-seizure segment); ``seizure_fraction`` of each block is seizure.
    ``shift_strength`` scales the spread of per-subject gain, spectral
    tilt and DC offset; zero makes every subject statistically identical.
    """

    n_subjects: int = 9
    channels: int = 2
    duration_s: float = 120.0
    blocks_per_subject: int = 4
    shift_strength: float = 1.0
    seizure_gain: float = 4.0
    seed: int = 0
    sample_rate_hz: float = 500.0
    seizure_fraction: float = 0.25
    interictal_rate_per_min: float = 2.0

    def __post_init__(self):
        checks = [
            ("n_subjects", self.n_subjects >= 2),
            ("channels", self.channels >= 1),
            ("duration_s", self.duration_s > 0),
            ("blocks_per_subject", self.blocks_per_subject >= 2),
            ("shift_strength", self.shift_strength >= 0),
            ("seizure_gain", self.seizure_gain > 1),
            ("sample_rate_hz", self.sample_rate_hz > 2 * BURST_BAND_HZ[1]),
            ("seizure_fraction", 0 < self.seizure_fraction < 1),
            ("interictal_rate_per_min", self.interictal_rate_per_min >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(
                    f"invalid cohort setting {name}={getattr(self, name)!r}", name)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits", "seed")
        seizure_s = self.duration_s * self.seizure_fraction
        if seizure_s < 1.0 or self.duration_s - seizure_s < 1.0:
            raise ConfigError(
                "seizure and non-seizure parts must each last at least 1 s",
                "seizure_fraction")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class SubjectProfile:
    """Generative parameters drawn for one subject."""

    gain: float
    tilt: float
    offset: float
    channel_gains: np.ndarray = field(repr=False)


def subject_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def draw_profile(rng, cfg: CohortConfig) -> SubjectProfile:
    # Always draw the same number of variates so the noise stream that
    # follows does not depend on shift_strength.
    z = rng.standard_normal(3 + cfg.channels)
    s = cfg.shift_strength
    return SubjectProfile(
        gain=float(np.exp(0.5 * s * z[0])),
        tilt=float(0.5 * s * z[1]),
        offset=float(0.5 * s * z[2]),
        channel_gains=np.exp(0.15 * s * z[3:]),
    )


def background_amplitude(freqs, tilt):
    """Unit-power amplitude response of the background noise."""
    amp = (1.0 + freqs / KNEE_HZ) ** (-(1.0 + tilt) / 2.0)
    amp[0] = 0.0
    return amp / np.sqrt(np.mean(amp[1:] ** 2))


def _band_limited(rng, n, fs, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(freqs < lo) | (freqs >= hi)] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _band_fraction(amp, freqs, lo, hi):
    p = amp ** 2
    return p[(freqs >= lo) & (freqs < hi)].sum() / p[1:].sum()


def _envelope(n, fs):
    ramp = min(n // 2, int(0.5 * fs))
    env = np.ones(n)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, ramp))
        env[:ramp] = r
        env[n - ramp:] = r[::-1]
    return env


def generate_subject(cfg: CohortConfig, index: int) -> Recording:
    rng = subject_rng(cfg.seed, index)
    prof = draw_profile(rng, cfg)
    fs = cfg.sample_rate_hz
    block_n = int(round(cfg.duration_s * fs))
    seizure_n = int(round(cfg.duration_s * cfg.seizure_fraction * fs))
    total = block_n * cfg.blocks_per_subject

    freqs = np.fft.rfftfreq(total, 1.0 / fs)
    amp = background_amplitude(freqs, prof.tilt)
    white = rng.standard_normal((cfg.channels, total))
    background = np.fft.irfft(np.fft.rfft(white, axis=1) * amp, total, axis=1)

    labels = np.zeros(total, dtype=np.int8)
    bursts = np.zeros_like(background)
    lo_hz, hi_hz = BURST_BAND_HZ
    half = BURST_WIDTH_HZ / 2
    # Band share of the background, from its theoretical spectrum.
    spectrum_freqs = np.fft.rfftfreq(block_n, 1.0 / fs)

    def add_burst(start, n, center, strength):
        lo, hi = center - half, center + half
        bg_power = _band_fraction(background_amplitude(spectrum_freqs, prof.tilt),
                                  spectrum_freqs, lo, hi)
        scale = strength * np.sqrt(bg_power * (cfg.seizure_gain ** 2 - 1.0))
        env = _envelope(n, fs)
        for c in range(cfg.channels):
            bursts[c, start:start + n] += scale * env * _band_limited(rng, n, fs, lo, hi)

    for b in range(cfg.blocks_per_subject):
        start = b * block_n
        labels[start:start + seizure_n] = 1
        center = rng.uniform(lo_hz + half, hi_hz - half)
        add_burst(start, seizure_n, center, rng.uniform(0.6, 1.4))
        quiet = block_n - seizure_n
        n_events = rng.poisson(cfg.interictal_rate_per_min * quiet / fs / 60.0)
        event_n = int(round(INTERICTAL_EVENT_S * fs))
        for _ in range(n_events):
            at = start + seizure_n + int(rng.integers(0, quiet - event_n))
            center = rng.uniform(lo_hz + half, hi_hz - half)
            add_burst(at, event_n, center, rng.uniform(0.6, 1.4))

    signal = (background + bursts) * prof.channel_gains[:, None]
    signal = prof.gain * (signal + prof.offset)
    return Recording(subject_id=f"S{index + 1:02d}", sample_rate_hz=fs,
                     channels=signal, labels=labels)


def generate_synthetic_cohort(cfg: CohortConfig) -> list[Recording]:
    """One recording per subject; each is a function of ``(cfg, index)`` only."""
    return [generate_subject(cfg, i) for i in range(cfg.n_subjects)]


# -- CSV persistence ------------------------------------------------------

def write_recording(rec: Recording, path) -> None:
    path = Path(path)
    header = (f"subject,{rec.subject_id},rate,{rec.sample_rate_hz!r},"
              f"channels,{rec.n_channels}\n")
    buf = io.StringIO()
    table = np.column_stack([rec.channels.T, rec.labels.astype(np.float64)])
    # 17 significant digits round-trip float64 exactly.
    fmt = ["%.17g"] * rec.n_channels + ["%d"]
    np.savetxt(buf, table, fmt=fmt, delimiter=",", newline="\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write(buf.getvalue())


def _parse_header(line, path):
    parts = line.rstrip("\n").split(",")
    if len(parts) != 6 or parts[0] != "subject" or parts[2] != "rate" \
            or parts[4] != "channels":
        raise ParseError(
            "expected header 'subject,<id>,rate,<hz>,channels,<C>'", 1, path)
    try:
        rate = float(parts[3])
        n_ch = int(parts[5])
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", 1, path) from None
    if not rate > 0:
        raise ConfigError(f"{path}: sample rate must be positive, got {rate}",
                          "sample_rate_hz")
    if n_ch < 1:
        raise ConfigError(f"{path}: channel count must be >= 1", "channels")
    return parts[1], rate, n_ch


def read_recording(path) -> Recording:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise ParseError("empty file, missing header", 1, path)
        subject, rate, n_ch = _parse_header(first, path)
        rows = []
        labels = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != n_ch + 1:
                raise ParseError(
                    f"expected {n_ch + 1} fields, found {len(cells)}", lineno, path)
            try:
                values = [float(c) for c in cells[:-1]]
            except ValueError:
                raise ParseError("non-numeric sample value", lineno, path) from None
            lab = cells[-1].strip()
            if lab not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {lab!r}", lineno, path)
            rows.append(values)
            labels.append(int(lab))
    data = np.array(rows, dtype=np.float64).reshape(-1, n_ch)
    return Recording(subject_id=subject, sample_rate_hz=rate,
                     channels=data.T.copy(), labels=np.array(labels, dtype=np.int8))
