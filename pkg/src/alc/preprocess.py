"""Channel selection, gap repair, windowing, normalization and splitting."""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptySetError,
    FormatError,
    InsufficientSubjectsError,
    ParamError,
)
from .pamap2_io import IntensityLevel, MetTable, SampleRecord, activity_to_level

DEFAULT_WINDOW = 200
DEFAULT_STRIDE = 100
DEFAULT_MAX_GAP = 10

# indices into the 18-channel layout: wrist acc/gyro, chest acc/gyro, ankle acc/gyro
_WRIST_ACC = [0, 1, 2]
_WRIST = list(range(0, 6))
_CHEST = list(range(6, 12))
_ANKLE = list(range(12, 18))


class SensorConfig(enum.Enum):
    WO = "WO"
    W6 = "W6"
    WC = "WC"
    WA = "WA"
    W18 = "W18"

    @property
    def channels(self) -> list[int]:
        return _CONFIG_CHANNELS[self]

    @property
    def channel_count(self) -> int:
        return len(_CONFIG_CHANNELS[self])

    @classmethod
    def parse(cls, tag: str) -> "SensorConfig":
        try:
            return cls(tag.upper())
        except ValueError:
            raise ParamError(f"unknown sensor config {tag!r}; choose from "
                             + ", ".join(c.value for c in cls)) from None


_CONFIG_CHANNELS = {
    SensorConfig.WO: _WRIST_ACC,
    SensorConfig.W6: _WRIST,
    SensorConfig.WC: _WRIST + _CHEST,
    SensorConfig.WA: _WRIST + _ANKLE,
    SensorConfig.W18: _WRIST + _CHEST + _ANKLE,
}


def select_channels(record: SampleRecord, config: SensorConfig) -> np.ndarray:
    """Channel vector of one record for ``config``, in the fixed channel order."""
    full = np.array([
        *record.imu_wrist.accel, *record.imu_wrist.gyro,
        *record.imu_chest.accel, *record.imu_chest.gyro,
        *record.imu_ankle.accel, *record.imu_ankle.gyro,
    ], dtype=np.float64)
    return full[config.channels]


def repair_missing(series, max_gap: int = DEFAULT_MAX_GAP):
    """Linearly interpolate short interior gaps.

    ``series`` is 1-D, or 2-D with time on axis 0 (each column handled
    independently). Returns ``(filled, mask)`` where ``mask`` is True at
    samples that are still missing: gaps longer than ``max_gap`` and gaps
    touching either end of the series.
    """
    arr = np.array(series, dtype=np.float64)
    if arr.ndim == 1:
        filled, mask = _repair_1d(arr, max_gap)
        return filled, mask
    out = np.empty_like(arr)
    mask = np.zeros(arr.shape, dtype=bool)
    for c in range(arr.shape[1]):
        out[:, c], mask[:, c] = _repair_1d(arr[:, c], max_gap)
    return out, mask


def _repair_1d(x: np.ndarray, max_gap: int):
    x = x.copy()
    missing = np.isnan(x)
    if not missing.any():
        return x, missing
    # run boundaries of the missing indicator
    edges = np.diff(np.concatenate(([0], missing.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    mask = missing.copy()
    for a, b in zip(starts, stops):
        if a == 0 or b == len(x) or (b - a) > max_gap:
            continue
        left, right = x[a - 1], x[b]
        frac = np.arange(1, b - a + 1) / (b - a + 1)
        x[a:b] = left + frac * (right - left)
        mask[a:b] = False
    return x, mask


@dataclass(frozen=True)
class WindowExample:
    data: np.ndarray  # channels x window_length
    label: IntensityLevel
    subject_id: int


class WindowSet:
    """A batch of windows held as arrays.

    ``X`` is ``[N, channels, window_length]``, ``y`` holds intensity codes
    (0=Low, 1=Medium, 2=High) and ``subjects`` the subject index per window.
    Iterating yields :class:`WindowExample` objects.
    """

    def __init__(self, X, y, subjects):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ParamError(f"window array must be 3-D, got shape {X.shape}")
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        subjects = np.asarray(subjects, dtype=np.int64).reshape(-1)
        if not (len(X) == len(y) == len(subjects)):
            raise ParamError("X, y and subjects must have equal length")
        self.X, self.y, self.subjects = X, y, subjects

    @classmethod
    def empty(cls, channels: int, window_length: int) -> "WindowSet":
        return cls(np.empty((0, channels, window_length)), [], [])

    @classmethod
    def concat(cls, sets) -> "WindowSet":
        sets = list(sets)
        if not sets:
            raise EmptySetError("nothing to concatenate")
        return cls(np.concatenate([s.X for s in sets]),
                   np.concatenate([s.y for s in sets]),
                   np.concatenate([s.subjects for s in sets]))

    def __len__(self):
        return len(self.y)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return WindowExample(self.X[idx], IntensityLevel(int(self.y[idx])),
                                 int(self.subjects[idx]))
        return WindowSet(self.X[idx], self.y[idx], self.subjects[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def channels(self) -> int:
        return self.X.shape[1]

    @property
    def window_length(self) -> int:
        return self.X.shape[2]

    def subject_ids(self) -> list[int]:
        return sorted(set(self.subjects.tolist()))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=len(IntensityLevel))

    def for_config(self, config: SensorConfig) -> "WindowSet":
        """Restrict an 18-channel set to a sensor configuration's channels.

        A set that already has exactly the configuration's channel count is
        returned unchanged.
        """
        if self.channels == config.channel_count:
            return self
        if self.channels != 18:
            raise ParamError(
                f"cannot derive {config.value} ({config.channel_count} channels) "
                f"from a {self.channels}-channel set")
        return WindowSet(self.X[:, config.channels, :], self.y, self.subjects)


def make_windows(stream, activity, window_length: int = DEFAULT_WINDOW,
                 stride: int = DEFAULT_STRIDE, *, mask=None, table: MetTable | None = None,
                 subject_id: int = 0, timestamps=None, max_dt: float | None = None) -> WindowSet:
    """Cut a labeled stream into fixed-length windows.

    Parameters
    ----------
    stream : array ``[channels, T]``
    activity : array ``[T]``
        Per-sample activity id (or intensity code when ``table`` is None).
        Contiguous runs of one value form segments; windows never cross a
        segment boundary.
    mask : bool array ``[channels, T]`` or ``[T]``, optional
        True where a value is missing. Windows touching a masked sample
        are dropped.
    table : MetTable, optional
        Maps activity ids to intensity levels.
    timestamps, max_dt : optional
        When both are given, a jump larger than ``max_dt`` between
        consecutive samples also ends a segment.
    """
    if window_length < 1 or stride < 1:
        raise ParamError("window_length and stride must be positive")
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim == 1:
        stream = stream[None, :]
    activity = np.asarray(activity).reshape(-1)
    C, T = stream.shape
    if len(activity) != T:
        raise ParamError("activity labels must have one entry per sample")
    if mask is None:
        bad = np.isnan(stream).any(axis=0)
    else:
        m = np.asarray(mask, dtype=bool)
        bad = (m.any(axis=0) if m.ndim == 2 else m) | np.isnan(stream).any(axis=0)

    breaks = np.flatnonzero(activity[1:] != activity[:-1]) + 1
    if timestamps is not None and max_dt is not None:
        ts = np.asarray(timestamps, dtype=np.float64)
        breaks = np.union1d(breaks, np.flatnonzero(np.diff(ts) > max_dt) + 1)
    bounds = np.concatenate(([0], breaks, [T])).astype(np.int64)
    bad_cum = np.concatenate(([0], np.cumsum(bad)))

    chunks, labels = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < window_length:
            continue
        starts = np.arange(a, b - window_length + 1, stride)
        clean = (bad_cum[starts + window_length] - bad_cum[starts]) == 0
        starts = starts[clean]
        if len(starts) == 0:
            continue
        act = int(activity[a])
        level = int(activity_to_level(act, table)) if table is not None else act
        for s in starts:
            chunks.append(stream[:, s:s + window_length])
        labels.extend([level] * len(starts))
    if not chunks:
        return WindowSet.empty(C, window_length)
    return WindowSet(np.stack(chunks), labels, [subject_id] * len(labels))


def window_count(T: int, window_length: int, stride: int) -> int:
    if T < window_length:
        return 0
    return (T - window_length) // stride + 1


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray


def fit_normalizer(train: WindowSet) -> ChannelStats:
    if len(train) == 0:
        raise EmptySetError("cannot fit a normalizer on an empty set")
    mean = train.X.mean(axis=(0, 2))
    std = train.X.std(axis=(0, 2))
    std = np.where(std > 1e-12, std, 1.0)
    return ChannelStats(mean, std)


def apply_normalizer(stats: ChannelStats, windows: WindowSet) -> WindowSet:
    X = (windows.X - stats.mean[None, :, None]) / stats.std[None, :, None]
    return WindowSet(X, windows.y, windows.subjects)


def split_random(examples: WindowSet, ratio: float = 0.8, seed: int = 0):
    """Shuffle and split into ``(train, test)`` with ``round(ratio * N)`` train items."""
    if not 0 < ratio < 1:
        raise ParamError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(examples)
    n_train = int(np.floor(ratio * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    return examples[np.sort(perm[:n_train])], examples[np.sort(perm[n_train:])]


def loso_folds(examples: WindowSet):
    """Leave-one-subject-out folds as ``(subject, train, test)`` triples."""
    subjects = examples.subject_ids()
    if len(subjects) < 2:
        raise InsufficientSubjectsError(
            f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    folds = []
    for s in subjects:
        held = examples.subjects == s
        folds.append((s, examples[~held], examples[held]))
    return folds


# --- binary window cache ---------------------------------------------------

CACHE_MAGIC = b"ALWIN1"
_HEADER = struct.Struct("<III")
_TRAILER = struct.Struct("<BH")


def write_cache(path, windows: WindowSet) -> None:
    """Write windows as: magic, (channels, length, count) u32, then per window
    a float32 ``channels x length`` payload, a u8 label and a u16 subject."""
    if len(windows) and (windows.subjects.min() < 0 or windows.subjects.max() > 0xFFFF):
        raise ParamError("subject indices must fit in 16 bits")
    C, L = windows.channels, windows.window_length
    payload = np.ascontiguousarray(windows.X, dtype="<f4").reshape(len(windows), C * L)
    rec = np.dtype([("x", "<f4", (C * L,)), ("label", "u1"), ("subject", "<u2")])
    body = np.empty(len(windows), dtype=rec)
    body["x"] = payload
    body["label"] = windows.y
    body["subject"] = windows.subjects
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(_HEADER.pack(C, L, len(windows)))
        fh.write(body.tobytes())


def read_cache(path) -> WindowSet:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_MAGIC):
        raise FormatError(f"{path}: not a window cache (bad magic)")
    off = len(CACHE_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    C, L, N = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    rec = np.dtype([("x", "<f4", (C * L,)), ("label", "u1"), ("subject", "<u2")])
    if len(raw) - off != rec.itemsize * N:
        raise FormatError(f"{path}: expected {N} windows, payload size mismatch")
    body = np.frombuffer(raw, dtype=rec, count=N, offset=off)
    X = body["x"].astype(np.float64).reshape(N, C, L)
    return WindowSet(X, body["label"].astype(np.int64), body["subject"].astype(np.int64))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def windows_digest(windows: WindowSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(windows.X).tobytes())
    h.update(windows.y.tobytes())
    h.update(windows.subjects.tobytes())
    return h.hexdigest()


def subject_windows(records, table: MetTable, subject_id: int,
                    window_length: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE,
                    max_gap: int = DEFAULT_MAX_GAP, sample_period: float = 0.01) -> WindowSet:
    """Full per-subject pipeline: 18 channels, gap repair, windowing, labels."""
    from .pamap2_io import records_to_arrays

    if not records:
        return WindowSet.empty(18, window_length)
    ts, acts, chans = records_to_arrays(records)
    filled, mask = repair_missing(chans, max_gap=max_gap)
    return make_windows(filled.T, acts, window_length, stride, mask=mask.T, table=table,
                        subject_id=subject_id, timestamps=ts, max_dt=1.5 * sample_period)
