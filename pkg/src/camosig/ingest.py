"""Sensor recording ingestion: parse/synthesize, fuse, clean, split.

Recordings carry 16 data channels per row (8 EMG, 3 accelerometer, 3
gyroscope, pose code, binary gesture label) plus a strictly increasing
timestamp. Fusion concatenates channel slices in recording order to build
14-, 6-, or 8-dimensional labeled instances.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CSV_HEADER = (
    "emg1,emg2,emg3,emg4,emg5,emg6,emg7,emg8,"
    "acc1,acc2,acc3,gyro1,gyro2,gyro3,pose,label,timestamp"
)
N_COLUMNS = 17

GESTURE = 1
NO_GESTURE = 0


class IngestError(ValueError):
    pass


class Pairing(enum.Enum):
    """Channel fusion choices; values are (name, dim)."""

    ACC_GYRO_EMG = ("acc-gyro-emg", 14)
    ACC_GYRO = ("acc-gyro", 6)
    EMG = ("emg", 8)

    @property
    def dim(self) -> int:
        return self.value[1]

    @property
    def tag(self) -> str:
        return self.value[0]

    @classmethod
    def from_tag(cls, tag: str) -> "Pairing":
        for p in cls:
            if p.tag == tag:
                return p
        raise IngestError(f"unknown pairing: {tag!r}")


class SplitTag(enum.Enum):
    ALL = "all"
    TRAIN = "train"
    VALIDATION = "validation"


@dataclass(frozen=True)
class SensorFrame:
    """One raw recording; channel arrays share the row axis."""

    emg: np.ndarray  # (n, 8)
    acc: np.ndarray  # (n, 3)
    gyro: np.ndarray  # (n, 3)
    pose: np.ndarray  # (n,)
    label: np.ndarray  # (n,) in {0, 1}
    timestamps: np.ndarray  # (n,), strictly increasing

    def __post_init__(self):
        n = self.emg.shape[0]
        if self.emg.shape != (n, 8) or self.acc.shape != (n, 3) or self.gyro.shape != (n, 3):
            raise IngestError("channel blocks must be (n,8), (n,3), (n,3)")
        for name in ("pose", "label", "timestamps"):
            if getattr(self, name).shape != (n,):
                raise IngestError(f"{name} must be length n")
        if n and not np.all(np.isin(self.label, (0, 1))):
            raise IngestError("labels must be binary")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise IngestError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.emg.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Fused, labeled instances plus split/provenance metadata."""

    vectors: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,)
    pairing: Pairing
    split_tag: SplitTag = SplitTag.ALL
    seed: int = 0

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if vectors.ndim != 2 or vectors.shape[0] != labels.shape[0]:
            raise IngestError("vectors and labels must align")
        if vectors.shape[1] != self.pairing.dim:
            raise IngestError(
                f"pairing {self.pairing.tag} expects dim {self.pairing.dim}"
            )
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _parse_cell(cell: str, path: Path, line_no: int) -> float:
    s = cell.strip()
    low = s.lower()
    if low == "nan":
        return math.nan
    if low == "inf":
        return math.inf
    if low == "-inf":
        return -math.inf
    try:
        value = float(s)
    except ValueError:
        raise IngestError(f"{path}:{line_no}: unparseable cell {cell!r}") from None
    if not math.isfinite(value):
        # Only the canonical sentinel spellings are accepted above.
        raise IngestError(f"{path}:{line_no}: unparseable cell {cell!r}")
    return value


def parse_recording(path) -> SensorFrame:
    """Read a recording CSV into a SensorFrame.

    Sentinel cells ("nan", "inf", "-inf", case-insensitive) are retained
    as non-finite values and cleaned later by :func:`preprocess`; any other
    non-numeric cell is a parse error.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise IngestError(f"{path}: unexpected header")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != N_COLUMNS:
                raise IngestError(
                    f"{path}:{line_no}: expected {N_COLUMNS} columns, got {len(cells)}"
                )
            rows.append([_parse_cell(c, path, line_no) for c in cells])
    if not rows:
        return _empty_frame()
    data = np.asarray(rows, dtype=float)
    labels = data[:, 15]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise IngestError(f"{path}: labels must be 0 or 1")
    ts = data[:, 16]
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        raise IngestError(f"{path}: timestamps must be strictly increasing")
    return SensorFrame(
        emg=data[:, 0:8],
        acc=data[:, 8:11],
        gyro=data[:, 11:14],
        pose=data[:, 14],
        label=labels.astype(int),
        timestamps=ts,
    )


def _empty_frame() -> SensorFrame:
    return SensorFrame(
        emg=np.empty((0, 8)),
        acc=np.empty((0, 3)),
        gyro=np.empty((0, 3)),
        pose=np.empty(0),
        label=np.empty(0, dtype=int),
        timestamps=np.empty(0),
    )


def write_recording(path, frame: SensorFrame) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(len(frame)):
            cells = (
                [repr(float(v)) for v in frame.emg[i]]
                + [repr(float(v)) for v in frame.acc[i]]
                + [repr(float(v)) for v in frame.gyro[i]]
                + [repr(float(frame.pose[i])), str(int(frame.label[i]))]
                + [repr(float(frame.timestamps[i]))]
            )
            fh.write(",".join(cells) + "\n")


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic recording shape: a square-wave label over noisy channels."""

    rows: int = 1000
    segments: int = 5
    gesture_fraction: float = 0.35
    emg_scale: float = 18.0
    acc_scale: float = 0.35
    gyro_scale: float = 28.0
    # Mean shift of gesture rows, in units of each channel group's scale.
    gesture_shift: float = 2.5
    # Degrees of freedom of the heavier-tailed gesture noise.
    gesture_tail_df: float = 5.0
    sample_period_s: float = 0.005


def _segment_labels(rows: int, segments: int, fraction: float) -> np.ndarray:
    """Square-wave labels: ``segments`` contiguous gesture runs."""
    total_gesture = int(round(rows * fraction))
    segments = max(1, min(segments, total_gesture if total_gesture else 1))
    labels = np.zeros(rows, dtype=int)
    if total_gesture == 0:
        return labels
    run_base, run_extra = divmod(total_gesture, segments)
    gap_total = rows - total_gesture
    gap_base, gap_extra = divmod(gap_total, segments + 1)
    pos = 0
    for s in range(segments):
        pos += gap_base + (1 if s < gap_extra else 0)
        run = run_base + (1 if s < run_extra else 0)
        labels[pos : pos + run] = GESTURE
        pos += run
    return labels


def synthesize_recording(cfg: GeneratorConfig, seed: int) -> SensorFrame:
    """Deterministic synthetic recording with separable, overlapping classes.

    Gesture rows get a per-channel mean shift plus heavier-tailed noise;
    rest rows are plain Gaussians. The label channel is a square wave of
    ``cfg.segments`` contiguous gesture runs.
    """
    if cfg.rows < 1:
        raise IngestError("generator needs at least one row")
    rng = np.random.default_rng(seed)
    labels = _segment_labels(cfg.rows, cfg.segments, cfg.gesture_fraction)
    gest = labels == GESTURE
    n = cfg.rows

    def channel_block(width: int, scale: float) -> np.ndarray:
        base = rng.normal(0.0, scale, size=(n, width))
        tail = rng.standard_t(cfg.gesture_tail_df, size=(n, width)) * scale
        shift = cfg.gesture_shift * scale
        block = np.where(gest[:, None], shift + tail, base)
        return block

    emg = np.round(channel_block(8, cfg.emg_scale))
    acc = channel_block(3, cfg.acc_scale)
    gyro = channel_block(3, cfg.gyro_scale)
    pose = rng.integers(0, 5, size=n).astype(float)
    ts = np.arange(n, dtype=float) * cfg.sample_period_s
    return SensorFrame(emg=emg, acc=acc, gyro=gyro, pose=pose, label=labels, timestamps=ts)


def fuse_channels(frame: SensorFrame, pairing: Pairing, seed: int = 0) -> Dataset:
    """Concatenate the pairing's channel slices, in recording order."""
    if len(frame) == 0:
        raise IngestError("cannot fuse an empty recording")
    if pairing is Pairing.ACC_GYRO_EMG:
        vectors = np.hstack([frame.emg, frame.acc, frame.gyro])
    elif pairing is Pairing.ACC_GYRO:
        vectors = np.hstack([frame.acc, frame.gyro])
    else:
        vectors = frame.emg.copy()
    return Dataset(
        vectors=vectors, labels=frame.label.copy(), pairing=pairing, seed=seed
    )


def preprocess(ds: Dataset) -> Dataset:
    """Drop rows with non-finite entries, then exact duplicates.

    Keeps the first occurrence of each (vector, label) pair and preserves
    the order of survivors; idempotent.
    """
    finite = np.all(np.isfinite(ds.vectors), axis=1)
    vectors = ds.vectors[finite]
    labels = ds.labels[finite]
    seen: set[bytes] = set()
    keep = np.zeros(len(labels), dtype=bool)
    for i in range(len(labels)):
        key = vectors[i].tobytes() + bytes([int(labels[i])])
        if key not in seen:
            seen.add(key)
            keep[i] = True
    vectors = vectors[keep]
    labels = labels[keep]
    if len(labels) == 0:
        raise IngestError("preprocessing removed every instance")
    return replace(ds, vectors=vectors, labels=labels)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic stratified split into (train, validation).

    Per-class training counts follow the largest-remainder rule against a
    total of round(train_fraction * n), so class proportions stay within
    one instance of the requested fraction.
    """
    if not 0.0 < train_fraction < 1.0:
        raise IngestError("train_fraction must be in (0, 1)")
    n = len(ds)
    classes = np.unique(ds.labels)
    counts = {int(c): int(np.sum(ds.labels == c)) for c in classes}
    if len(classes) < 2 or min(counts.values()) < 2:
        raise IngestError("each class needs at least two instances to split")

    total_train = int(round(train_fraction * n))
    targets = {c: train_fraction * counts[c] for c in counts}
    alloc = {c: int(math.floor(targets[c])) for c in counts}
    remaining = total_train - sum(alloc.values())
    by_remainder = sorted(
        counts, key=lambda c: (-(targets[c] - alloc[c]), c)
    )
    for c in by_remainder:
        if remaining <= 0:
            break
        if alloc[c] < counts[c]:
            alloc[c] += 1
            remaining -= 1

    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    for c in sorted(counts):
        members = np.flatnonzero(ds.labels == c)
        order = rng.permutation(len(members))
        k = alloc[c]
        train_idx.append(members[order[:k]])
        val_idx.append(members[order[k:]])
    tr = np.sort(np.concatenate(train_idx))
    va = np.sort(np.concatenate(val_idx))
    train = replace(
        ds, vectors=ds.vectors[tr], labels=ds.labels[tr], split_tag=SplitTag.TRAIN, seed=seed
    )
    val = replace(
        ds, vectors=ds.vectors[va], labels=ds.labels[va], split_tag=SplitTag.VALIDATION, seed=seed
    )
    return train, val
