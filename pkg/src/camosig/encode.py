"""Reversible camouflage of short signals as tiny images or audio clips.

Both paths zero-pad the signal to the next perfect-square length, then
min-max quantize: images map onto [0, 2^bits - 1] pixels, audio onto
signed 16-bit PCM held sample-and-hold for a fixed dwell and followed by
silence up to a target duration. The affine scale parameters live in a
sidecar so the transform inverts to within half a quantization step.
"""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 8000
DEFAULT_DWELL_MS = 25.0
PCM_FULL_SCALE = 32767


@dataclass(frozen=True)
class ScaleMeta:
    """Sidecar metadata required to invert an encoded artifact."""

    original_len: int
    padded_len: int
    v_min: float
    v_max: float
    degenerate: bool
    bit_depth: int
    dwell_ms: float | None = None
    sample_rate: int | None = None

    def to_dict(self) -> dict:
        return {
            "original_len": self.original_len,
            "padded_len": self.padded_len,
            "v_min": self.v_min,
            "v_max": self.v_max,
            "degenerate": self.degenerate,
            "bit_depth": self.bit_depth,
            "dwell_ms": self.dwell_ms,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleMeta":
        return cls(**d)


@dataclass(frozen=True)
class ImageGrid:
    side: int
    pixels: np.ndarray  # (side, side) unsigned ints, row-major
    meta: ScaleMeta

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (self.side, self.side):
            raise ValueError("pixels must be side x side")
        object.__setattr__(self, "pixels", px)

    @property
    def max_value(self) -> int:
        return (1 << self.meta.bit_depth) - 1


@dataclass(frozen=True)
class WavClip:
    sample_rate: int
    samples: np.ndarray  # int16 PCM, mono
    meta: ScaleMeta

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


class EncodingError(ValueError):
    pass


def pad_signal(v: np.ndarray) -> np.ndarray:
    """Append zeros up to the smallest perfect square length.

    14 -> 16, 6 -> 9, 8 -> 9; already-square lengths pass through.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if n < 1:
        raise EncodingError("cannot pad an empty signal")
    k = math.isqrt(n)
    if k * k < n:
        k += 1
    out = np.zeros(k * k, dtype=float)
    out[:n] = v
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def signal_to_image(v: np.ndarray, bit_depth: int = 8) -> ImageGrid:
    """Pad, then affinely map the padded signal onto the pixel range.

    The appended zeros participate in the min/max, so an all-positive
    signal gets zero-valued pixels at its padding positions. A constant
    padded signal is degenerate: all pixels 0, inversion returns v_min.
    """
    if bit_depth not in (8, 16):
        raise EncodingError("bit_depth must be 8 or 16")
    v = np.asarray(v, dtype=float).ravel()
    if v.size < 1:
        raise EncodingError("empty signal")
    if np.any(~np.isfinite(v)):
        raise EncodingError("signal must be finite")
    padded = pad_signal(v)
    k = math.isqrt(padded.size)
    v_min = float(padded.min())
    v_max = float(padded.max())
    max_px = (1 << bit_depth) - 1
    degenerate = v_min == v_max
    if degenerate:
        px = np.zeros(padded.size)
    else:
        px = _round_half_away((padded - v_min) * (max_px / (v_max - v_min)))
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    meta = ScaleMeta(
        original_len=v.size,
        padded_len=padded.size,
        v_min=v_min,
        v_max=v_max,
        degenerate=degenerate,
        bit_depth=bit_depth,
    )
    return ImageGrid(side=k, pixels=px.astype(dtype).reshape(k, k), meta=meta)


def image_to_signal(img: ImageGrid) -> np.ndarray:
    """Invert the affine map and strip the padding."""
    meta = img.meta
    if img.side * img.side != meta.padded_len:
        raise EncodingError("corrupted metadata: side^2 != padded_len")
    if meta.degenerate:
        return np.full(meta.original_len, meta.v_min)
    max_px = (1 << meta.bit_depth) - 1
    flat = img.pixels.astype(float).reshape(-1)
    values = meta.v_min + flat * ((meta.v_max - meta.v_min) / max_px)
    return values[: meta.original_len]


def signal_to_audio(
    v: np.ndarray,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    dwell_ms: float = DEFAULT_DWELL_MS,
    target_duration_s: float = 4.0,
) -> WavClip:
    """Encode a short signal as a PCM burst followed by silence.

    The padded signal is mapped affinely onto [-32767, 32767]; each value
    is held for ``dwell_ms`` (sample-and-hold), then zero samples fill out
    the target duration.
    """
    if sample_rate < 1000:
        raise EncodingError("sample_rate must be at least 1000 Hz")
    v = np.asarray(v, dtype=float).ravel()
    if v.size < 1:
        raise EncodingError("empty signal")
    if np.any(~np.isfinite(v)):
        raise EncodingError("signal must be finite")
    padded = pad_signal(v)
    dwell_samples = int(round(sample_rate * dwell_ms / 1000.0))
    if dwell_samples < 1:
        raise EncodingError("dwell shorter than one sample")
    total_samples = int(round(sample_rate * target_duration_s))
    burst = padded.size * dwell_samples
    if burst > total_samples:
        raise EncodingError("burst longer than target duration")
    v_min = float(padded.min())
    v_max = float(padded.max())
    degenerate = v_min == v_max
    if degenerate:
        pcm_values = np.zeros(padded.size)
    else:
        scale = (2 * PCM_FULL_SCALE) / (v_max - v_min)
        pcm_values = _round_half_away((padded - v_min) * scale - PCM_FULL_SCALE)
    samples = np.zeros(total_samples, dtype=np.int16)
    samples[:burst] = np.repeat(pcm_values.astype(np.int16), dwell_samples)
    meta = ScaleMeta(
        original_len=v.size,
        padded_len=padded.size,
        v_min=v_min,
        v_max=v_max,
        degenerate=degenerate,
        bit_depth=16,
        dwell_ms=dwell_ms,
        sample_rate=sample_rate,
    )
    return WavClip(sample_rate=sample_rate, samples=samples, meta=meta)


def audio_to_signal(clip: WavClip) -> np.ndarray:
    """Read the first sample of each dwell window and invert the map."""
    meta = clip.meta
    if meta.dwell_ms is None or meta.sample_rate is None:
        raise EncodingError("clip metadata is missing dwell/sample rate")
    dwell_samples = int(round(meta.sample_rate * meta.dwell_ms / 1000.0))
    needed = meta.original_len * dwell_samples
    if len(clip.samples) < needed:
        raise EncodingError("clip shorter than the encoded burst")
    if meta.degenerate:
        return np.full(meta.original_len, meta.v_min)
    idx = np.arange(meta.original_len) * dwell_samples
    pcm = clip.samples[idx].astype(float)
    inv = (pcm + PCM_FULL_SCALE) * ((meta.v_max - meta.v_min) / (2 * PCM_FULL_SCALE))
    return meta.v_min + inv


# ---------------------------------------------------------------------------
# Artifact files: binary PGM for images, RIFF WAV for audio, JSON sidecars.


def write_sidecar(path: Path, meta: ScaleMeta) -> Path:
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(meta.to_dict(), sort_keys=True))
    return sidecar


def read_sidecar(path: Path) -> ScaleMeta:
    sidecar = Path(str(path) + ".meta.json")
    return ScaleMeta.from_dict(json.loads(sidecar.read_text()))


def write_pgm(path, img: ImageGrid) -> None:
    """Binary PGM (P5); 16-bit samples are big-endian per the format."""
    path = Path(path)
    maxval = img.max_value
    header = f"P5\n{img.side} {img.side}\n{maxval}\n".encode("ascii")
    if img.meta.bit_depth == 8:
        payload = img.pixels.astype(np.uint8).tobytes(order="C")
    else:
        payload = img.pixels.astype(">u2").tobytes(order="C")
    path.write_bytes(header + payload)
    write_sidecar(path, img.meta)


def read_pgm(path) -> ImageGrid:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise EncodingError("not a binary PGM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":  # comment line
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if width != height:
        raise EncodingError("image grid must be square")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    px = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    meta = read_sidecar(path)
    return ImageGrid(
        side=width, pixels=px.astype(np.uint16 if maxval > 255 else np.uint8).reshape(width, width), meta=meta
    )


def write_wav(path, clip: WavClip) -> None:
    path = Path(path)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(clip.samples.astype("<i2").tobytes())
    write_sidecar(path, clip.meta)


def read_wav(path) -> WavClip:
    path = Path(path)
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise EncodingError("expected 16-bit mono WAV")
        rate = wf.getframerate()
        frames = wf.readframes(wf.getnframes())
    samples = np.frombuffer(frames, dtype="<i2").astype(np.int16)
    meta = read_sidecar(path)
    return WavClip(sample_rate=rate, samples=samples, meta=meta)


def target_duration_for(dim: int) -> float:
    """Default clip length: 9 s for padded length 16, 4 s otherwise."""
    padded = pad_signal(np.zeros(dim)).size
    return 9.0 if padded >= 16 else 4.0
