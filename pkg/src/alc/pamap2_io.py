"""Reading PAMAP2 ``.dat`` subject files and MET-based intensity labels.

Each PAMAP2 row has 54 space-separated columns::

    0       timestamp (s)
    1       activity id (0 = transient)
    2       heart rate (bpm)
    3-19    wrist IMU
    20-36   chest IMU
    37-53   ankle IMU

and every IMU block has 17 columns: temperature, 3x acceleration (+-16g),
3x acceleration (+-6g), 3x gyroscope, 3x magnetometer, 4x orientation.
Only the +-16g acceleration and the gyroscope are kept; the +-6g sensor
saturates during vigorous motion.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    ColumnCountError,
    DomainError,
    InputError,
    NumberFormatError,
    ParseError,
    UnknownActivityError,
)

N_COLUMNS = 54
IMU_WIDTH = 17
IMU_OFFSETS = {"wrist": 3, "chest": 20, "ankle": 37}
# offsets inside one IMU block
_ACC16 = slice(1, 4)
_ACC6 = slice(4, 7)
_GYRO = slice(7, 10)
_MAG = slice(10, 13)
_ORIENT = slice(13, 17)

ACTIVITY_NAMES = {
    1: "lying",
    2: "sitting",
    3: "standing",
    4: "walking",
    5: "running",
    6: "cycling",
    7: "Nordic walking",
    9: "watching TV",
    10: "computer work",
    11: "car driving",
    12: "ascending stairs",
    13: "descending stairs",
    16: "vacuum cleaning",
    17: "ironing",
    18: "folding laundry",
    19: "house cleaning",
    20: "playing soccer",
    24: "rope jumping",
}
TRANSIENT = 0

_DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")


class IntensityLevel(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


@dataclass(frozen=True)
class ImuBlock:
    """One IMU reading. Missing components are NaN."""

    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]

    def __post_init__(self):
        if len(self.accel) != 3 or len(self.gyro) != 3:
            raise InputError("ImuBlock needs exactly 3 accel and 3 gyro components")


@dataclass(frozen=True)
class SampleRecord:
    timestamp: float
    activity_id: int
    heart_rate: float  # NaN when missing
    imu_wrist: ImuBlock
    imu_chest: ImuBlock
    imu_ankle: ImuBlock

    def imu(self, location: str) -> ImuBlock:
        return getattr(self, "imu_" + location)


def _number(token: str) -> float:
    if token == "NaN":
        return math.nan
    if not _DECIMAL.match(token):
        raise NumberFormatError(f"not a decimal number or NaN: {token!r}")
    return float(token)


def parse_line(line: str) -> SampleRecord:
    """Parse one 54-column PAMAP2 row."""
    tokens = line.split()
    if len(tokens) != N_COLUMNS:
        raise ColumnCountError(f"expected {N_COLUMNS} columns, got {len(tokens)}")
    values = [_number(t) for t in tokens]

    timestamp = values[0]
    if not math.isfinite(timestamp) or timestamp < 0:
        raise DomainError(f"bad timestamp {tokens[0]!r}")
    act = values[1]
    if not math.isfinite(act) or act != int(act):
        raise NumberFormatError(f"activity id must be an integer, got {tokens[1]!r}")
    act = int(act)
    if act != TRANSIENT and act not in ACTIVITY_NAMES:
        raise DomainError(f"unknown PAMAP2 activity code {act}")

    blocks = []
    for loc in ("wrist", "chest", "ankle"):
        raw = values[IMU_OFFSETS[loc] : IMU_OFFSETS[loc] + IMU_WIDTH]
        blocks.append(ImuBlock(accel=tuple(raw[_ACC16]), gyro=tuple(raw[_GYRO])))
    return SampleRecord(timestamp, act, values[2], *blocks)


def _fmt(v: float) -> str:
    return "NaN" if math.isnan(v) else repr(float(v))


def render_line(record: SampleRecord) -> str:
    """Inverse of :func:`parse_line` for the retained columns.

    Discarded columns (temperature, +-6g accel, magnetometer, orientation)
    are written as ``NaN``.
    """
    cols = ["NaN"] * N_COLUMNS
    cols[0] = _fmt(record.timestamp)
    cols[1] = str(record.activity_id)
    cols[2] = _fmt(record.heart_rate)
    for loc, off in IMU_OFFSETS.items():
        block = record.imu(loc)
        for i, v in enumerate(block.accel):
            cols[off + _ACC16.start + i] = _fmt(v)
        for i, v in enumerate(block.gyro):
            cols[off + _GYRO.start + i] = _fmt(v)
    return " ".join(cols)


def load_subject(path, subject_id=None, drop_transient: bool = True) -> list[SampleRecord]:
    """Read a subject file into records, in file order.

    Blank lines are skipped. Transient rows (activity 0) are dropped unless
    ``drop_transient`` is False. A malformed line aborts the load with a
    :class:`ParseError` naming the line.
    """
    path = Path(path)
    records = []
    with path.open("r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_line(line)
            except InputError as exc:
                raise ParseError(path, lineno, exc) from exc
            if drop_transient and rec.activity_id == TRANSIENT:
                continue
            records.append(rec)
    return records


def met_to_level(met: float) -> IntensityLevel:
    if not met > 0:
        raise DomainError(f"MET must be positive, got {met}")
    if met <= 3.0:
        return IntensityLevel.LOW
    if met <= 6.0:
        return IntensityLevel.MEDIUM
    return IntensityLevel.HIGH


class MetTable(Mapping):
    """Read-only map from activity id to MET value."""

    def __init__(self, entries: Mapping[int, float], names: Mapping[int, str] | None = None):
        entries = {int(k): float(v) for k, v in entries.items()}
        if TRANSIENT in entries:
            raise DomainError("activity 0 (transient) cannot carry a MET value")
        for k, v in entries.items():
            if not v > 0:
                raise DomainError(f"MET for activity {k} must be positive, got {v}")
        self._entries = entries
        self.names = dict(names or {})

    def __getitem__(self, key):
        return self._entries[key]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    @classmethod
    def read(cls, path=None) -> "MetTable":
        """Load a TSV table (``id<TAB>met<TAB>name``); default is the bundled one."""
        if path is None:
            text = resources.files("alc.data").joinpath("met_table.tsv").read_text()
            source = "met_table.tsv"
        else:
            text = Path(path).read_text()
            source = str(path)
        entries, names = {}, {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError(source, lineno, "expected id<TAB>met<TAB>name")
            try:
                aid, met = int(parts[0]), float(parts[1])
            except ValueError as exc:
                raise ParseError(source, lineno, exc) from exc
            entries[aid] = met
            names[aid] = parts[2].strip() if len(parts) > 2 else ""
        return cls(entries, names)


def activity_to_level(activity_id: int, table: MetTable) -> IntensityLevel:
    try:
        met = table[activity_id]
    except KeyError:
        raise UnknownActivityError(f"activity {activity_id} has no MET entry") from None
    return met_to_level(met)


# channel order used by every downstream array: wrist, chest, ankle; accel then gyro; x, y, z
CHANNEL_NAMES = [
    f"{loc}_{sensor}_{axis}"
    for loc in ("wrist", "chest", "ankle")
    for sensor in ("acc", "gyro")
    for axis in "xyz"
]


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack records into ``(timestamps[N], activity_ids[N], channels[N, 18])``."""
    n = len(records)
    ts = np.empty(n)
    acts = np.empty(n, dtype=np.int64)
    chans = np.empty((n, 18))
    for i, r in enumerate(records):
        ts[i] = r.timestamp
        acts[i] = r.activity_id
        chans[i] = (
            *r.imu_wrist.accel, *r.imu_wrist.gyro,
            *r.imu_chest.accel, *r.imu_chest.gyro,
            *r.imu_ankle.accel, *r.imu_ankle.gyro,
        )
    return ts, acts, chans
