"""Descriptors for encoded artifacts: oriented-energy texture, MFCC, PCA.

The texture descriptor applies a log-Gabor filter bank in the frequency
domain and averages each filter's response magnitude over a coarse spatial
grid; with 4 scales x 8 orientations this gives 512 entries on a 4x4 grid
and 288 on a 3x3 grid. Audio clips get a single mel-cepstral descriptor
averaged over frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .encode import ImageGrid, ScaleMeta, WavClip


@dataclass(frozen=True)
class GistParams:
    resize_to: int = 0  # 0 keeps the native side
    scales: int = 4
    orientations: int = 8
    grid: int = 4

    @property
    def descriptor_len(self) -> int:
        return self.grid * self.grid * self.scales * self.orientations


@dataclass(frozen=True)
class MfccParams:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 26
    n_coeffs: int = 20
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs must not exceed n_mels")


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def resize_image(img: ImageGrid, side: int) -> ImageGrid:
    """Upsample with bilinear interpolation on the unit square.

    Both grids are parameterized over [0, 1]^2 through their pixel centers
    (align-corners), so resizing to the native side is the identity and a
    constant image stays constant.
    """
    if side < img.side:
        raise ValueError("resize_image only upsamples")
    if side == img.side:
        return img
    src = img.pixels.astype(float)
    n = img.side
    if n == 1:
        out = np.full((side, side), float(src[0, 0]))
    else:
        pos = np.linspace(0.0, 1.0, side) * (n - 1)
        i0 = np.minimum(np.floor(pos).astype(int), n - 2)
        t = pos - i0
        top = src[i0][:, i0] * (1 - t)[None, :] + src[i0][:, i0 + 1] * t[None, :]
        bot = src[i0 + 1][:, i0] * (1 - t)[None, :] + src[i0 + 1][:, i0 + 1] * t[None, :]
        out = top * (1 - t)[:, None] + bot * t[:, None]
    maxval = img.max_value
    quant = np.clip(np.sign(out) * np.floor(np.abs(out) + 0.5), 0, maxval)
    dtype = np.uint8 if img.meta.bit_depth == 8 else np.uint16
    meta = ScaleMeta(
        original_len=side * side,
        padded_len=side * side,
        v_min=img.meta.v_min,
        v_max=img.meta.v_max,
        degenerate=img.meta.degenerate,
        bit_depth=img.meta.bit_depth,
    )
    return ImageGrid(side=side, pixels=quant.astype(dtype), meta=meta)


def _log_gabor_bank(side: int, scales: int, orientations: int) -> np.ndarray:
    """Frequency-domain log-Gabor filters, (scales, orientations, side, side).

    One-sided in angle so the inverse transform is an analytic envelope;
    zero at DC so flat images produce exactly zero response.
    """
    f = np.fft.fftfreq(side)
    fx = f[None, :]
    fy = f[:, None]
    radius = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    radius_safe = np.where(radius == 0, 1.0, radius)

    sigma_ratio = 0.65  # ~1.5 octave radial bandwidth
    sigma_theta = np.pi / orientations / 1.2
    bank = np.empty((scales, orientations, side, side))
    for s in range(scales):
        f0 = 0.25 / (2.0 ** s)
        radial = np.exp(
            -(np.log(radius_safe / f0) ** 2) / (2.0 * np.log(sigma_ratio) ** 2)
        )
        radial[radius == 0] = 0.0
        for o in range(orientations):
            angle = o * np.pi / orientations
            d = np.angle(np.exp(1j * (theta - angle)))
            bank[s, o] = radial * np.exp(-(d ** 2) / (2.0 * sigma_theta ** 2))
    return bank


def gist_descriptor(img: ImageGrid, p: GistParams | None = None) -> np.ndarray:
    """Oriented band-pass energy averaged over a grid x grid partition.

    Entries are ordered scale-major, then orientation, then grid cell
    (row-major), for a total of grid^2 * scales * orientations values.
    """
    p = p or GistParams()
    if p.resize_to:
        img = resize_image(img, p.resize_to)
    side = img.side
    if side < p.grid:
        raise ValueError("image side smaller than the pooling grid")
    if side < 2:
        raise ValueError(
            "image has no band-pass frequency support; resize it first"
        )
    pixels = img.pixels.astype(float) / img.max_value
    spectrum = np.fft.fft2(pixels)
    bank = _log_gabor_bank(side, p.scales, p.orientations)

    edges = np.linspace(0, side, p.grid + 1).astype(int)
    out = np.empty(p.descriptor_len)
    idx = 0
    for s in range(p.scales):
        for o in range(p.orientations):
            response = np.abs(np.fft.ifft2(spectrum * bank[s, o]))
            for r in range(p.grid):
                for c in range(p.grid):
                    cell = response[edges[r] : edges[r + 1], edges[c] : edges[c + 1]]
                    out[idx] = cell.mean()
                    idx += 1
    return out


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, evaluated at bin centers."""
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz = _mel_to_hz(mel_points)
    fb = np.zeros((n_mels, freqs.size))
    for j in range(n_mels):
        lo, mid, hi = hz[j], hz[j + 1], hz[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[j] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mfcc_descriptor(clip: WavClip, p: MfccParams | None = None) -> np.ndarray:
    """Mean-over-frames mel cepstrum of a clip.

    Per frame: Hann window, magnitude spectrum, mel filterbank, log with a
    floor, orthonormal DCT-II, first ``n_coeffs`` coefficients.
    """
    p = p or MfccParams()
    sr = clip.sample_rate
    frame_len = int(round(sr * p.frame_ms / 1000.0))
    hop = int(round(sr * p.hop_ms / 1000.0))
    x = clip.samples.astype(float) / 32768.0
    if x.size == 0:
        raise ValueError("empty clip")
    if x.size < frame_len:
        raise ValueError("clip shorter than one analysis frame")
    n_frames = 1 + (x.size - frame_len) // hop
    n_fft = 1
    while n_fft < frame_len:
        n_fft *= 2
    window = np.hanning(frame_len)
    fb = _mel_filterbank(p.n_mels, n_fft, sr)

    offsets = np.arange(n_frames) * hop
    frames = x[offsets[:, None] + np.arange(frame_len)[None, :]] * window
    magnitude = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    energies = magnitude @ fb.T
    log_e = np.log(np.maximum(energies, p.log_floor))
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, : p.n_coeffs]
    return coeffs.mean(axis=0)


def mfcc_frames(clip: WavClip, p: MfccParams | None = None) -> np.ndarray:
    """Per-frame coefficients, for aggregation-stability checks."""
    p = p or MfccParams()
    sr = clip.sample_rate
    frame_len = int(round(sr * p.frame_ms / 1000.0))
    hop = int(round(sr * p.hop_ms / 1000.0))
    x = clip.samples.astype(float) / 32768.0
    if x.size < frame_len:
        raise ValueError("clip shorter than one analysis frame")
    n_frames = 1 + (x.size - frame_len) // hop
    n_fft = 1
    while n_fft < frame_len:
        n_fft *= 2
    window = np.hanning(frame_len)
    fb = _mel_filterbank(p.n_mels, n_fft, sr)
    offsets = np.arange(n_frames) * hop
    frames = x[offsets[:, None] + np.arange(frame_len)[None, :]] * window
    magnitude = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    log_e = np.log(np.maximum(magnitude @ fb.T, p.log_floor))
    return scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, : p.n_coeffs]


def pca_fit(data: np.ndarray, k: int) -> PcaModel:
    """Top-k principal directions of centered data via SVD.

    Sign convention: the largest-magnitude entry of each component is made
    positive, so fits are reproducible across runs and platforms.
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError("k must be in [1, min(n-1, d)]")
    mean = data.mean(axis=0)
    centered = data - mean
    total_var = float(np.sum(centered * centered) / (n - 1))
    if total_var == 0.0:
        raise ValueError("zero total variance")
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k]
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    variances = (svals[:k] ** 2) / (n - 1)
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=variances,
        explained_variance_ratio=variances / total_var,
    )


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError("dimension mismatch")
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return model.mean + y @ model.components


def write_descriptors_csv(path, vectors: np.ndarray, labels: np.ndarray) -> None:
    """One row per instance, feature columns then the label last."""
    vectors = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels)
    with open(path, "w", encoding="utf-8") as fh:
        for vec, lab in zip(vectors, labels):
            fh.write(",".join(repr(float(v)) for v in vec) + f",{int(lab)}\n")


def read_descriptors_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            rows.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
    return np.asarray(rows, dtype=float), np.asarray(labels, dtype=int)
