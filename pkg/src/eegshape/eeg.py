"""EEG recordings: CSV ingestion, windowing, normalization, splitting, synthesis."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

CLASSES = ("circle", "star", "triangle", "rhombus", "rectangle")
N_CHANNELS = 14
SAMPLE_RATE = 128
WINDOW = 10
CHANNEL_COLUMNS = tuple(f"ch{i:02d}" for i in range(1, N_CHANNELS + 1))
CSV_HEADER = ("subject", "session", "trial", "label") + CHANNEL_COLUMNS


def one_hot(index: int, n: int = len(CLASSES)) -> np.ndarray:
    v = np.zeros(n, dtype=np.float32)
    v[index] = 1.0
    return v


@dataclass
class EEGRecording:
    subject_id: int
    session: int
    trial: int
    label: str
    samples: np.ndarray  # [T, 14]

    def __post_init__(self):
        if self.label not in CLASSES:
            raise DataError(f"unknown label {self.label!r}; valid labels: {', '.join(CLASSES)}")
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2 or self.samples.shape[1] != N_CHANNELS:
            raise ShapeError(f"recording must be [T, {N_CHANNELS}], got {self.samples.shape}")

    @property
    def class_index(self) -> int:
        return CLASSES.index(self.label)


@dataclass
class EEGSegment:
    values: np.ndarray  # [M, N]
    label: np.ndarray   # one-hot, length 5

    @property
    def class_index(self) -> int:
        return int(np.argmax(self.label))


@dataclass
class DatasetSplit:
    train: list[EEGSegment]
    test: list[EEGSegment]
    seed: int


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray


def stack_segments(segments: list[EEGSegment]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values [n, M, N], class indices [n])``."""
    if not segments:
        return np.zeros((0, WINDOW, N_CHANNELS), np.float32), np.zeros(0, np.int64)
    x = np.stack([s.values for s in segments])
    y = np.array([s.class_index for s in segments], dtype=np.int64)
    return x, y


# --------------------------------------------------------------------------
# CSV

def ingest_csv(path) -> list[EEGRecording]:
    """Read recordings from a CSV with one row per sample.

    Rows sharing ``(subject, session, trial, label)`` and appearing
    contiguously form one recording, in file order.
    """
    recordings: list[EEGRecording] = []
    key, rows = None, []

    def flush():
        if rows:
            s, se, t, lab = key
            recordings.append(EEGRecording(s, se, t, lab, np.array(rows, dtype=np.float32)))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        if tuple(header[:4]) != CSV_HEADER[:4]:
            raise DataError(f"line 1: expected header starting with {','.join(CSV_HEADER[:4])}")
        n_ch = len(header) - 4
        if n_ch != N_CHANNELS or tuple(header[4:]) != CHANNEL_COLUMNS:
            raise DataError(f"line 1: expected {N_CHANNELS} channel columns ch01..ch14, got {n_ch}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            label = row[3].strip()
            if label not in CLASSES:
                raise DataError(f"line {lineno}: unknown label {label!r}; "
                                f"valid labels: {', '.join(CLASSES)}")
            try:
                k = (int(row[0]), int(row[1]), int(row[2]), label)
                values = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DataError(f"line {lineno}: non-finite sample value")
            if k != key:
                flush()
                key, rows = k, []
            rows.append(values)
    flush()
    return recordings


def write_csv(recordings: list[EEGRecording], path) -> None:
    """Write recordings in the format read by :func:`ingest_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in recordings:
            meta = [r.subject_id, r.session, r.trial, r.label]
            for row in r.samples:
                w.writerow(meta + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# Windowing / normalization / splitting

def segment_stream(rec: EEGRecording, window: int = WINDOW, overlap: float = 0.5) -> list[EEGSegment]:
    """Cut a recording into overlapping windows that inherit its label."""
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    step = int(round(window * (1 - overlap)))
    if step < 1:
        raise ValueError(f"window {window} with overlap {overlap} gives step < 1")
    t = rec.samples.shape[0]
    if t < window:
        return []
    label = one_hot(rec.class_index)
    return [EEGSegment(rec.samples[s:s + window].copy(), label.copy())
            for s in range(0, t - window + 1, step)]


def fit_normalizer(train_segments: list[EEGSegment], std_floor: float = 1e-8) -> ChannelStats:
    """Per-channel mean/std over every row of the training segments."""
    x, _ = stack_segments(train_segments)
    rows = x.reshape(-1, x.shape[-1]).astype(np.float64)
    std = np.maximum(rows.std(axis=0), std_floor)
    return ChannelStats(rows.mean(axis=0), std)


def normalize_segments(segments: list[EEGSegment], stats: ChannelStats) -> list[EEGSegment]:
    mean = stats.mean.astype(np.float64)
    std = stats.std.astype(np.float64)
    return [EEGSegment(((s.values - mean) / std).astype(np.float32), s.label) for s in segments]


def split_dataset(segments: list[EEGSegment], train_fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Seeded uniform shuffle; the first ``round(train_fraction·n)`` go to train."""
    if len(segments) < 5:
        raise ValueError(f"need at least 5 segments to split, got {len(segments)}")
    perm = np.random.default_rng(seed).permutation(len(segments))
    n_train = int(round(train_fraction * len(segments)))
    return DatasetSplit([segments[i] for i in perm[:n_train]],
                        [segments[i] for i in perm[n_train:]], seed)


def prepare_dataset(recordings: list[EEGRecording], seed: int, window: int = WINDOW,
                    overlap: float = 0.5, train_fraction: float = 0.8):
    """Segment, split and z-score with train statistics. Returns ``(split, stats)``."""
    segs = [s for r in recordings for s in segment_stream(r, window, overlap)]
    split = split_dataset(segs, train_fraction, seed)
    stats = fit_normalizer(split.train)
    return DatasetSplit(normalize_segments(split.train, stats),
                        normalize_segments(split.test, stats), seed), stats


# --------------------------------------------------------------------------
# Synthetic data

@dataclass
class SynthConfig:
    """Class signature generator constants.

    Channel ``c`` of class ``k`` carries
    ``amplitude * sin(2π (base_freq + k·freq_step) t / sample_rate + φ_kc)``
    plus 1/f noise scaled to ``noise_amplitude`` standard deviation.
    """

    n_samples: int = 640
    sample_rate: int = SAMPLE_RATE
    amplitude: float = 1.0
    base_freq: float = 4.0
    freq_step: float = 3.0
    noise_amplitude: float = 1.0
    random_onset: bool = True

    def class_freq(self, k: int) -> float:
        return self.base_freq + self.freq_step * k


def pink_noise(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum, shape ``[n, channels]``."""
    white = rng.standard_normal((n, channels))
    spec = np.fft.rfft(white, axis=0)
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = 1 / np.sqrt(f[1:])
    out = np.fft.irfft(spec * scale[:, None], n=n, axis=0)
    return out / out.std(axis=0, keepdims=True)


def synth_eeg(n_trials_per_class: int, seed: int, config: SynthConfig | None = None) -> list[EEGRecording]:
    """Generate ``5 · n_trials_per_class`` labelled recordings."""
    if n_trials_per_class < 1:
        raise ValueError("n_trials_per_class must be >= 1")
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, size=(len(CLASSES), N_CHANNELS))
    recordings = []
    trial = 0
    for i in range(n_trials_per_class):
        for k, label in enumerate(CLASSES):
            onset = int(rng.integers(0, cfg.sample_rate)) if cfg.random_onset else 0
            t = np.arange(cfg.n_samples)[:, None] + onset
            x = cfg.amplitude * np.sin(2 * np.pi * cfg.class_freq(k) * t / cfg.sample_rate + phases[k])
            noise = pink_noise(rng, cfg.n_samples, N_CHANNELS)
            x = x + cfg.noise_amplitude * noise
            recordings.append(EEGRecording(1, i // 5 + 1, trial, label, x.astype(np.float32)))
            trial += 1
    return recordings
