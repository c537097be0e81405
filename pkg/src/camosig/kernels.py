"""The 21-kernel grid: RBF plus divergence-modulated RBF variants.

Three modulation families (Amplified, Scaled, AmplifiedScaled) crossed with
two divergences (plain and metric/square-root) and three Chisini means give
18 divergence kernels; the RBF baseline is carried once per mean family so
every family's randomized dataset gets its own RBF run, for 21 grid entries
in total.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass

import numpy as np

from .divergence import ChisiniKind, Distribution, cjsd, cjsd_matrix, mcjsd

GRAM_MAGIC = b"CGM1"


class KernelFamily(enum.Enum):
    RBF = "rbf"
    AMPLIFIED = "amplified"
    SCALED = "scaled"
    AMPLIFIED_SCALED = "amplified_scaled"


class DivergenceKind(enum.Enum):
    NONE = "none"
    CJSD = "cjsd"
    MCJSD = "mcjsd"


@dataclass(frozen=True)
class KernelSpec:
    """One cell of the kernel grid.

    For the RBF baseline ``mean`` tags the randomization family the run is
    paired with (the baseline is evaluated once per family on that family's
    shuffled dataset); for divergence kernels it selects the Chisini mean.
    """

    family: KernelFamily
    divergence: DivergenceKind
    mean: ChisiniKind
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        is_rbf = self.family is KernelFamily.RBF
        if is_rbf != (self.divergence is DivergenceKind.NONE):
            raise ValueError("RBF <=> divergence NONE")

    @property
    def is_rbf(self) -> bool:
        return self.family is KernelFamily.RBF

    def with_sigma(self, sigma: float) -> "KernelSpec":
        return KernelSpec(self.family, self.divergence, self.mean, sigma)

    def key(self) -> str:
        return f"{self.family.value}-{self.divergence.value}-{self.mean.value}"


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    spec: KernelSpec
    instance_ids: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        ids = np.asarray(self.instance_ids, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("gram matrix must be square")
        if ids.shape != (values.shape[0],):
            raise ValueError("instance_ids must match gram size")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "instance_ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def enumerate_specs(sigma: float = 1.0) -> list[KernelSpec]:
    """All 21 grid entries for a fixed sigma.

    3 families x 2 divergences x 3 means, plus the RBF baseline repeated
    once per mean family.
    """
    specs = [
        KernelSpec(KernelFamily.RBF, DivergenceKind.NONE, mean, sigma)
        for mean in ChisiniKind
    ]
    for family in (
        KernelFamily.AMPLIFIED,
        KernelFamily.SCALED,
        KernelFamily.AMPLIFIED_SCALED,
    ):
        for div in (DivergenceKind.CJSD, DivergenceKind.MCJSD):
            for mean in ChisiniKind:
                specs.append(KernelSpec(family, div, mean, sigma))
    return specs


def rbf(x_i: np.ndarray, x_j: np.ndarray, sigma: float) -> float:
    """exp(-||x_i - x_j||^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if np.any(~np.isfinite(x_i)) or np.any(~np.isfinite(x_j)):
        raise ValueError("rbf requires finite inputs")
    d2 = float(np.sum((x_i - x_j) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def _modulate(family: KernelFamily, d: float, d2: float, sigma: float) -> float:
    scale = d2 / (2.0 * sigma * sigma)
    if family is KernelFamily.AMPLIFIED:
        return d * np.exp(-scale)
    if family is KernelFamily.SCALED:
        return float(np.exp(-d * scale))
    if family is KernelFamily.AMPLIFIED_SCALED:
        return d * float(np.exp(-d * scale))
    raise ValueError(f"not a divergence kernel family: {family!r}")


def divergence_kernel(
    x_i: np.ndarray,
    x_j: np.ndarray,
    p_i: Distribution,
    p_j: Distribution,
    spec: KernelSpec,
) -> float:
    """Divergence-modulated kernel value for one pair."""
    if spec.is_rbf:
        raise ValueError("spec is the RBF baseline; use rbf()")
    if spec.sigma <= 0:
        raise ValueError("sigma must be positive")
    d = (
        cjsd(p_i, p_j, spec.mean)
        if spec.divergence is DivergenceKind.CJSD
        else mcjsd(p_i, p_j, spec.mean)
    )
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    d2 = float(np.sum((x_i - x_j) ** 2))
    return float(_modulate(spec.family, d, d2, spec.sigma))


def squared_distances(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.clip(d2, 0.0, None, out=d2)
    return d2


def divergence_matrix(masses: np.ndarray, kind: ChisiniKind, metric: bool) -> np.ndarray:
    """All-pairs divergence matrix; the metric variant is the square root."""
    d = cjsd_matrix(masses, kind)
    return np.sqrt(d) if metric else d


def gram_from_parts(d2: np.ndarray, div: np.ndarray | None, spec: KernelSpec) -> np.ndarray:
    """Assemble a Gram matrix from cached squared distances and divergences.

    ``div`` is ignored for the RBF baseline. Diagonal laws are enforced
    exactly: 1 for RBF/Scaled, 0 for the Amplified families.
    """
    s2 = 2.0 * spec.sigma * spec.sigma
    if spec.is_rbf:
        k = np.exp(-d2 / s2)
    elif spec.family is KernelFamily.AMPLIFIED:
        k = div * np.exp(-d2 / s2)
    elif spec.family is KernelFamily.SCALED:
        k = np.exp(-div * d2 / s2)
    else:
        k = div * np.exp(-div * d2 / s2)
    # Mirror the upper triangle so symmetry is exact, not recomputed.
    k = np.triu(k, 1)
    k = k + k.T
    diag = 1.0 if spec.is_rbf or spec.family is KernelFamily.SCALED else 0.0
    np.fill_diagonal(k, diag)
    return k


def gram(
    vectors: np.ndarray,
    dists: list[Distribution] | None,
    spec: KernelSpec,
    instance_ids: np.ndarray | None = None,
) -> GramMatrix:
    """Full Gram matrix for one kernel spec.

    For divergence kernels ``dists`` supplies the per-sample distributions
    aligned with ``vectors`` rows.
    """
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    if n == 0:
        raise ValueError("cannot build a Gram matrix for an empty dataset")
    d2 = squared_distances(vectors)
    if spec.is_rbf:
        div = None
    else:
        if dists is None or len(dists) != n:
            raise ValueError("distributions must align with instances")
        masses = np.stack([d.mass for d in dists])
        div = divergence_matrix(
            masses, spec.mean, spec.divergence is DivergenceKind.MCJSD
        )
    values = gram_from_parts(d2, div, spec)
    ids = np.arange(n) if instance_ids is None else instance_ids
    return GramMatrix(values=values, spec=spec, instance_ids=ids)


def clip_negative_eigenvalues(g: GramMatrix) -> GramMatrix:
    """Diagnostic spectral repair: project onto the PSD cone.

    The Amplified families have zero diagonal and are generally indefinite;
    the SVM consumes them as-is, but this helper lets runs inspect how much
    mass sits in the negative spectrum.
    """
    w, v = np.linalg.eigh(g.values)
    w = np.clip(w, 0.0, None)
    repaired = (v * w) @ v.T
    repaired = (repaired + repaired.T) / 2.0
    return GramMatrix(values=repaired, spec=g.spec, instance_ids=g.instance_ids)


def save_gram(path, g: GramMatrix) -> None:
    """Binary Gram format: magic, JSON header, row-major float64 LE payload."""
    header = {
        "n": g.n,
        "family": g.spec.family.value,
        "divergence": g.spec.divergence.value,
        "mean": g.spec.mean.value,
        "sigma": g.spec.sigma,
        "instance_ids": g.instance_ids.tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRAM_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(g.values.astype("<f8").tobytes(order="C"))


def load_gram(path) -> GramMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRAM_MAGIC:
            raise ValueError("not a Gram matrix file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = header["n"]
        payload = fh.read(n * n * 8)
        if len(payload) != n * n * 8:
            raise ValueError("truncated Gram payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()
    spec = KernelSpec(
        family=KernelFamily(header["family"]),
        divergence=DivergenceKind(header["divergence"]),
        mean=ChisiniKind(header["mean"]),
        sigma=header["sigma"],
    )
    return GramMatrix(
        values=values, spec=spec, instance_ids=np.asarray(header["instance_ids"])
    )
