"""Chisini-mean Jensen-Shannon divergences and per-sample KDE distributions.

A sample (one fused sensor vector) is turned into a discrete probability
distribution by smoothing its channel values onto a shared 1-D grid with a
Gaussian kernel. Pairs of such distributions are compared with the CJSD
family, where the classical Jensen-Shannon midpoint (p+q)/2 is replaced by
an elementwise arithmetic, geometric, or harmonic mean.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Floor applied to every grid mass before renormalization. The geometric and
# harmonic midpoints vanish wherever either mass is zero, which would make
# the log terms singular; a strictly positive floor is the minimal repair.
MASS_FLOOR = 1e-12

DEFAULT_GRID_SIZE = 64

# Natural log everywhere: divergences are reported in nats.


class ChisiniKind(enum.Enum):
    AM = "am"
    GM = "gm"
    HM = "hm"


@dataclass(frozen=True)
class Distribution:
    """Probability masses on a shared evaluation grid.

    Invariants: masses strictly positive (floored), summing to 1 within
    1e-12, same length as the grid.
    """

    grid: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if grid.ndim != 1 or mass.shape != grid.shape:
            raise ValueError("grid and mass must be 1-D arrays of equal length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mass", mass)

    def same_grid(self, other: "Distribution") -> bool:
        return self.grid.shape == other.grid.shape and np.array_equal(
            self.grid, other.grid
        )


def chisini_mean(p, q, kind: ChisiniKind):
    """Elementwise Chisini mean of two non-negative masses.

    Scalars or arrays. The harmonic mean of (0, 0) is defined as 0.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("chisini_mean requires non-negative inputs")
    if kind is ChisiniKind.AM:
        out = (p + q) / 2.0
    elif kind is ChisiniKind.GM:
        out = np.sqrt(p * q)
    elif kind is ChisiniKind.HM:
        s = p + q
        out = np.divide(2.0 * p * q, s, out=np.zeros_like(s), where=s > 0)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown Chisini kind: {kind!r}")
    if out.ndim == 0:
        return float(out)
    return out


def make_distribution(grid: np.ndarray, raw_mass: np.ndarray) -> Distribution:
    """Normalize, floor at MASS_FLOOR, renormalize into a Distribution.

    The floor applies on the probability scale, so every stored mass is
    within a relative hair of MASS_FLOOR or above regardless of the raw
    magnitudes. An all-zero raw vector becomes the uniform distribution.
    """
    raw = np.asarray(raw_mass, dtype=float)
    if np.any(~np.isfinite(raw)) or np.any(raw < 0):
        raise ValueError("raw mass must be finite and non-negative")
    total = raw.sum()
    if total <= 0:
        norm = np.full(raw.shape, 1.0 / raw.size)
    else:
        norm = raw / total
    floored = np.maximum(norm, MASS_FLOOR)
    return Distribution(grid=grid, mass=floored / floored.sum())


def silverman_bandwidth(values: np.ndarray, fallback_span: float) -> float:
    """Silverman's rule over a sample's values.

    Falls back to 1% of ``fallback_span`` when the sample is constant (or
    too short for a spread estimate).
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    h = 0.0
    if n >= 2:
        sigma = float(np.std(values, ddof=1))
        q75, q25 = np.percentile(values, [75, 25])
        iqr = float(q75 - q25)
        spread = min(sigma, iqr / 1.34) if iqr > 0 else sigma
        h = 0.9 * spread * n ** (-0.2)
    if h <= 0:
        h = 0.01 * fallback_span
    return h


def make_grid(all_values: np.ndarray, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Shared evaluation grid spanning the pooled value range.

    Bounds are the global min/max of ``all_values`` padded by three pooled
    Silverman bandwidths, so tail mass near the extremes is still captured.
    """
    vals = np.asarray(all_values, dtype=float).ravel()
    if vals.size == 0 or np.any(~np.isfinite(vals)):
        raise ValueError("grid values must be finite and non-empty")
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    pad = 3.0 * silverman_bandwidth(vals, span)
    return np.linspace(lo - pad, hi + pad, size)


def sample_to_distribution(
    x: np.ndarray, grid: np.ndarray, bandwidth: float | None = None
) -> Distribution:
    """Gaussian KDE over one sample's channel values, on a shared grid.

    ``bandwidth=None`` selects Silverman's rule over the sample's values,
    with a constant-sample fallback of 1% of the grid span.
    """
    x = np.asarray(x, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if x.size == 0 or np.any(~np.isfinite(x)):
        raise ValueError("sample values must be finite and non-empty")
    # Canonical value order makes the result an exact function of the
    # value multiset (summation order would otherwise leak in at 1 ulp).
    x = np.sort(x)
    span = float(grid[-1] - grid[0])
    h = silverman_bandwidth(x, span) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    z = (grid[:, None] - x[None, :]) / h
    raw = np.exp(-0.5 * z * z).sum(axis=1)
    return make_distribution(grid, raw)


def _check_pair(p: Distribution, q: Distribution):
    if not p.same_grid(q):
        raise ValueError("distributions must share the same evaluation grid")


def cjsd(p: Distribution, q: Distribution, kind: ChisiniKind) -> float:
    """Chisini-Jensen-Shannon divergence in nats.

    0.5 * [sum_i p_i ln(p_i/M_i) + sum_i q_i ln(q_i/M_i)] with M_i the
    elementwise Chisini mean. Symmetric, non-negative, and exactly zero
    for identical mass vectors.
    """
    _check_pair(p, q)
    pm, qm = p.mass, q.mass
    # Mass differences at or below the floor are indiscernible by
    # construction; snapping them to zero keeps self-divergence exact.
    if pm is qm or float(np.max(np.abs(pm - qm))) <= MASS_FLOOR:
        return 0.0
    m = chisini_mean(pm, qm, kind)
    val = 0.5 * float(np.sum(pm * np.log(pm / m)) + np.sum(qm * np.log(qm / m)))
    # Masses are floored so every term is finite; clip rounding noise at zero.
    return val if val > 0.0 else 0.0


def mcjsd(p: Distribution, q: Distribution, kind: ChisiniKind) -> float:
    """Metric variant: square root of the corresponding CJSD."""
    return float(np.sqrt(cjsd(p, q, kind)))


def cjsd_cross(masses_a: np.ndarray, masses_b: np.ndarray, kind: ChisiniKind) -> np.ndarray:
    """CJSD between every row of ``masses_a`` and every row of ``masses_b``."""
    a = np.asarray(masses_a, dtype=float)
    b = np.asarray(masses_b, dtype=float)
    plogp_a = np.sum(a * np.log(a), axis=1)
    plogp_b = np.sum(b * np.log(b), axis=1)
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        m = chisini_mean(a[i][None, :], b, kind)
        logm = np.log(m)
        cross = plogp_a[i] + plogp_b - a[i][None, :] @ logm.T - np.sum(b * logm, axis=1)
        row = 0.5 * np.asarray(cross).ravel()
        np.clip(row, 0.0, None, out=row)
        out[i] = row
    return out


def cjsd_matrix(masses: np.ndarray, kind: ChisiniKind) -> np.ndarray:
    """All-pairs CJSD for rows of a stacked mass matrix.

    ``masses`` is (n, G) with every row floored and normalized (as produced
    by :func:`sample_to_distribution`). Returns a symmetric (n, n) matrix
    with an exactly zero diagonal. Rows are processed in blocks so the
    n^2 * G work stays vectorized.
    """
    masses = np.asarray(masses, dtype=float)
    n = masses.shape[0]
    out = np.zeros((n, n))
    plogp = np.sum(masses * np.log(masses), axis=1)
    for i in range(n):
        rest = masses[i + 1 :]
        if rest.size == 0:
            continue
        m = chisini_mean(masses[i][None, :], rest, kind)
        logm = np.log(m)
        cross = plogp[i] + plogp[i + 1 :] - masses[i][None, :] @ logm.T - np.sum(
            rest * logm, axis=1
        )
        row = 0.5 * np.asarray(cross).ravel()
        np.clip(row, 0.0, None, out=row)
        out[i, i + 1 :] = row
        out[i + 1 :, i] = row
    return out
