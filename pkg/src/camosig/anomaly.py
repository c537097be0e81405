"""Novelty detection: one-class SVM, isolation forest, GMM with calibration.

Detectors train on a single class and score unseen instances; the shared
convention here is that larger scores mean more inlier-like, so a single
threshold rule (score >= threshold -> inlier) covers all three detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

EULER_GAMMA = 0.5772156649


class DetectorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# One-class SVM (RBF kernel), solved on the simplex dual.


@dataclass
class OcSvmModel:
    alphas: np.ndarray  # on the support vectors only
    support_vectors: np.ndarray
    rho: float
    nu: float
    sigma: float


def _rbf_matrix(x: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.clip(d2, 0.0, None, out=d2)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def ocsvm_train(
    data: np.ndarray, nu: float = 0.1, sigma: float = 1.0, tol: float = 1e-6, max_iter: int = 100_000
) -> OcSvmModel:
    """Minimize 0.5 a'Ka over the simplex with box 1/(nu n).

    Pairwise mass transfers between the most violating coordinates keep
    sum(alpha) = 1 exact. decision(x) = sum_i alpha_i K(x, x_i) - rho.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < 2:
        raise DetectorError("need at least two training instances")
    if not 0.0 < nu <= 1.0:
        raise DetectorError("nu must be in (0, 1]")
    if sigma <= 0:
        raise DetectorError("sigma must be positive")
    if np.all(data == data[0]):
        raise DetectorError("training data is degenerate (all rows identical)")

    K = _rbf_matrix(data, data, sigma)
    ub = 1.0 / (nu * n)
    alpha = np.full(n, 1.0 / n)
    grad = K @ alpha  # gradient of 0.5 a'Ka
    for _ in range(max_iter):
        can_shrink = alpha > 0
        can_grow = alpha < ub
        i = int(np.argmax(np.where(can_shrink, grad, -np.inf)))
        j = int(np.argmin(np.where(can_grow, grad, np.inf)))
        gap = grad[i] - grad[j]
        if gap <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        step = gap / eta if eta > 0 else np.inf
        step = min(step, alpha[i], ub - alpha[j])
        if step <= 0:
            break
        alpha[i] -= step
        alpha[j] += step
        grad += step * (K[:, j] - K[:, i])

    sv_mask = alpha > 1e-12
    margin = sv_mask & (alpha < ub * (1.0 - 1e-9))
    if margin.any():
        rho = float(np.mean(grad[margin]))
    else:
        lo = float(np.max(grad[alpha >= ub * (1.0 - 1e-9)], initial=-np.inf))
        hi = float(np.min(grad[~sv_mask], initial=np.inf))
        if not np.isfinite(lo):
            lo = hi
        if not np.isfinite(hi):
            hi = lo
        rho = (lo + hi) / 2.0
    return OcSvmModel(
        alphas=alpha[sv_mask],
        support_vectors=data[sv_mask],
        rho=rho,
        nu=nu,
        sigma=sigma,
    )


def ocsvm_decision(model: OcSvmModel, x: np.ndarray) -> np.ndarray:
    """Signed inlier score; negative values are novelties."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = _rbf_matrix(x, model.support_vectors, model.sigma)
    return k @ model.alphas - model.rho


def median_heuristic_sigma(data: np.ndarray) -> float:
    """Median pairwise distance, a serviceable default RBF width."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n > 500:
        rng = np.random.default_rng(0)
        data = data[rng.choice(n, 500, replace=False)]
    d2 = (
        np.sum(data * data, axis=1)[:, None]
        + np.sum(data * data, axis=1)[None, :]
        - 2.0 * data @ data.T
    )
    tri = d2[np.triu_indices(len(data), k=1)]
    tri = tri[tri > 0]
    if tri.size == 0:
        return 1.0
    return float(np.sqrt(np.median(tri)))


# ---------------------------------------------------------------------------
# Isolation forest.


@dataclass
class _Node:
    size: int
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class IsoForest:
    trees: list[_Node]
    psi: int
    n_trees: int
    seed: int


def average_path_length(m: int) -> float:
    """Expected unsuccessful-search depth in a binary search tree of m keys."""
    if m <= 1:
        return 0.0
    return 2.0 * (math.log(m - 1) + EULER_GAMMA) - 2.0 * (m - 1) / m


def _grow_tree(x: np.ndarray, depth: int, limit: int, rng) -> _Node:
    n = x.shape[0]
    if depth >= limit or n <= 1 or np.all(x == x[0]):
        return _Node(size=n)
    feature = int(rng.integers(0, x.shape[1]))
    lo = float(x[:, feature].min())
    hi = float(x[:, feature].max())
    if lo == hi:
        # Constant on the drawn feature; try a random non-constant one.
        spread = x.max(axis=0) - x.min(axis=0)
        candidates = np.flatnonzero(spread > 0)
        if candidates.size == 0:
            return _Node(size=n)
        feature = int(rng.choice(candidates))
        lo = float(x[:, feature].min())
        hi = float(x[:, feature].max())
    threshold = float(rng.uniform(lo, hi))
    mask = x[:, feature] < threshold
    if not mask.any() or mask.all():
        return _Node(size=n)
    return _Node(
        size=n,
        feature=feature,
        threshold=threshold,
        left=_grow_tree(x[mask], depth + 1, limit, rng),
        right=_grow_tree(x[~mask], depth + 1, limit, rng),
    )


def iforest_train(
    data: np.ndarray, n_trees: int = 100, psi: int = 256, seed: int = 0
) -> IsoForest:
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    psi = min(psi, n)
    if psi < 2:
        raise DetectorError("subsample size must be at least 2")
    if n_trees < 1:
        raise DetectorError("need at least one tree")
    rng = np.random.default_rng(seed)
    limit = int(math.ceil(math.log2(psi)))
    trees = []
    for _ in range(n_trees):
        idx = rng.choice(n, size=psi, replace=False)
        trees.append(_grow_tree(data[idx], 0, limit, rng))
    return IsoForest(trees=trees, psi=psi, n_trees=n_trees, seed=seed)


def _path_length(node: _Node, x: np.ndarray) -> float:
    depth = 0
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.threshold else node.right
        depth += 1
    return depth + average_path_length(node.size)


def isolation_score(mean_path: float, psi: int) -> float:
    """2^(-E[h]/c(psi)); 0.5 exactly when the mean path equals c(psi)."""
    return float(2.0 ** (-mean_path / average_path_length(psi)))


def iforest_score(forest: IsoForest, x: np.ndarray) -> np.ndarray:
    """Anomaly score in (0, 1); larger means easier to isolate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(x.shape[0])
    for i, row in enumerate(x):
        mean_path = float(
            np.mean([_path_length(t, row) for t in forest.trees])
        )
        out[i] = isolation_score(mean_path, forest.psi)
    return out


# ---------------------------------------------------------------------------
# Gaussian mixture with EM, BIC selection, isotonic calibration.


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood_trace: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.weights)


def _log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    z = solve_triangular(chol, diff.T, lower=True).T
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + np.sum(z * z, axis=1))


def _kmeanspp_means(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    means = [x[int(rng.integers(0, n))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((x - m) ** 2, axis=1) for m in means], axis=0
        )
        total = d2.sum()
        if total <= 0:
            means.append(x[int(rng.integers(0, n))])
            continue
        probs = d2 / total
        means.append(x[int(rng.choice(n, p=probs))])
    return np.stack(means)


def gmm_fit(
    data: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    ridge: float = 1e-6,
    tol: float = 1e-8,
) -> GmmModel:
    """EM from a kmeans++ style seeding; the ridge keeps covariances PD.

    The log-likelihood trace is recorded after every full EM step and is
    non-decreasing; the fit stops early once the improvement is below
    ``tol`` (or would go negative at numerical precision).
    """
    x = np.asarray(data, dtype=float)
    n, d = x.shape
    if k < 1:
        raise DetectorError("k must be at least 1")
    if n <= k:
        raise DetectorError("need more instances than components")
    rng = np.random.default_rng(seed)
    means = _kmeanspp_means(x, k, rng)
    # Hard-assign to the seeds for the initial responsibilities.
    d2 = np.stack([np.sum((x - m) ** 2, axis=1) for m in means], axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    weights = np.empty(k)
    covs = np.empty((k, d, d))
    trace: list[float] = []
    prev = -np.inf
    for _ in range(max_iter):
        # M-step.
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for c in range(k):
            diff = x - means[c]
            cov = (resp[:, c][:, None] * diff).T @ diff / nk[c]
            covs[c] = cov + ridge * np.eye(d)
        # E-step and likelihood of the updated parameters.
        log_comp = np.stack(
            [np.log(weights[c]) + _log_gaussian(x, means[c], covs[c]) for c in range(k)],
            axis=1,
        )
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.sum())
        if not np.isfinite(ll):
            raise DetectorError("non-finite likelihood during EM")
        if ll < prev - 1e-12:
            break  # numerical plateau; keep the previous (better) trace
        trace.append(ll)
        if ll - prev < tol and np.isfinite(prev):
            break
        prev = ll
        resp = np.exp(log_comp - log_norm[:, None])
    return GmmModel(
        weights=weights.copy(),
        means=means.copy(),
        covariances=covs.copy(),
        log_likelihood_trace=trace,
    )


def gmm_score(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Per-instance log-likelihood under the mixture."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    log_comp = np.stack(
        [
            np.log(model.weights[c]) + _log_gaussian(x, model.means[c], model.covariances[c])
            for c in range(model.k)
        ],
        axis=1,
    )
    return logsumexp(log_comp, axis=1)


def gmm_responsibilities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    log_comp = np.stack(
        [
            np.log(model.weights[c]) + _log_gaussian(x, model.means[c], model.covariances[c])
            for c in range(model.k)
        ],
        axis=1,
    )
    return np.exp(log_comp - logsumexp(log_comp, axis=1)[:, None])


def gmm_bic(model: GmmModel, data: np.ndarray) -> float:
    x = np.asarray(data, dtype=float)
    n, d = x.shape
    params = (model.k - 1) + model.k * d + model.k * d * (d + 1) // 2
    ll = float(gmm_score(model, x).sum())
    return -2.0 * ll + params * math.log(n)


def gmm_fit_bic(
    data: np.ndarray, k_range=range(1, 6), seed: int = 0, ridge: float = 1e-6
) -> GmmModel:
    """Fit every k in the range and keep the lowest-BIC model."""
    best = None
    best_bic = np.inf
    for k in k_range:
        if k >= len(data):
            continue
        model = gmm_fit(data, k, seed=seed, ridge=ridge)
        bic = gmm_bic(model, data)
        if bic < best_bic:
            best, best_bic = model, bic
    if best is None:
        raise DetectorError("no feasible component count")
    return best


# ---------------------------------------------------------------------------
# Isotonic calibration (pool adjacent violators).


@dataclass
class IsotonicCalibrator:
    breakpoints: np.ndarray  # sorted scores
    fitted: np.ndarray  # non-decreasing values in [0, 1]


def pav(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Non-decreasing least-squares fit by pool-adjacent-violators."""
    values = np.asarray(values, dtype=float)
    w = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    level_value: list[float] = []
    level_weight: list[float] = []
    level_count: list[int] = []
    for v, wt in zip(values, w):
        level_value.append(float(v))
        level_weight.append(float(wt))
        level_count.append(1)
        while len(level_value) > 1 and level_value[-2] > level_value[-1]:
            wv = level_weight[-2] + level_weight[-1]
            merged = (
                level_value[-2] * level_weight[-2] + level_value[-1] * level_weight[-1]
            ) / wv
            count = level_count[-2] + level_count[-1]
            for lst in (level_value, level_weight, level_count):
                lst.pop()
            level_value[-1] = merged
            level_weight[-1] = wv
            level_count[-1] = count
    out = np.empty(len(values))
    pos = 0
    for v, c in zip(level_value, level_count):
        out[pos : pos + c] = v
        pos += c
    return out


def isotonic_fit(scores: np.ndarray, targets: np.ndarray) -> IsotonicCalibrator:
    """PAV over targets aligned with ascending scores.

    Exact score ties are pooled (averaged) before the sweep so the fit is
    a function of the score value.
    """
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if scores.size == 0:
        raise DetectorError("need at least one calibration point")
    if np.any(np.diff(scores) < 0):
        raise DetectorError("scores must be sorted ascending")
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    pooled = np.zeros(len(uniq))
    np.add.at(pooled, inverse, targets)
    pooled /= counts
    fitted = pav(pooled, counts.astype(float))
    return IsotonicCalibrator(breakpoints=uniq, fitted=np.clip(fitted, 0.0, 1.0))


def isotonic_apply(cal: IsotonicCalibrator, score) -> np.ndarray | float:
    """Left-constant step interpolation, clamped outside the breakpoints."""
    s = np.asarray(score, dtype=float)
    idx = np.searchsorted(cal.breakpoints, s, side="right") - 1
    idx = np.clip(idx, 0, len(cal.fitted) - 1)
    out = cal.fitted[idx]
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Unified detection protocol.


@dataclass
class DetectionResult:
    scores: np.ndarray  # larger = more inlier-like
    labels: np.ndarray  # 1 inlier, 0 outlier
    threshold: float


def detect(score_fn, data: np.ndarray, threshold: float) -> DetectionResult:
    """Score every instance and threshold: score >= threshold -> inlier."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise DetectorError("empty evaluation set")
    scores = np.asarray(score_fn(data), dtype=float)
    labels = (scores >= threshold).astype(int)
    return DetectionResult(scores=scores, labels=labels, threshold=threshold)


@dataclass
class GmmCalibrated:
    gmm: GmmModel
    calibrator: IsotonicCalibrator

    def inlier_score(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(isotonic_apply(self.calibrator, gmm_score(self.gmm, x)))


def fit_gmm_calibrated(
    train: np.ndarray,
    seed: int = 0,
    calibration_fraction: float = 0.2,
    anchor_fraction: float = 0.05,
    ridge: float = 1e-6,
    k_range=range(1, 6),
) -> GmmCalibrated:
    """GMM density fit plus an isotonic map from log-likelihood to [0, 1].

    One-class training provides no negatives, so the calibrator sees a
    held-out slice of training-class scores as positives plus a small
    anchor set pinned just below the minimum observed score as negatives.
    """
    train = np.asarray(train, dtype=float)
    rng = np.random.default_rng(seed)
    n = train.shape[0]
    n_cal = max(2, int(round(calibration_fraction * n)))
    order = rng.permutation(n)
    cal_idx, fit_idx = order[:n_cal], order[n_cal:]
    if len(fit_idx) <= 5:
        fit_idx = order  # tiny sets: fit and calibrate on everything
        cal_idx = order
    gmm = gmm_fit_bic(train[fit_idx], k_range=k_range, seed=seed, ridge=ridge)
    cal_scores = np.sort(gmm_score(gmm, train[cal_idx]))
    span = cal_scores[-1] - cal_scores[0]
    offset = 1e-6 * span if span > 0 else 1.0
    n_anchor = max(1, int(round(anchor_fraction * len(cal_scores))))
    anchor = np.full(n_anchor, cal_scores[0] - offset)
    scores = np.concatenate([anchor, cal_scores])
    targets = np.concatenate([np.zeros(n_anchor), np.ones(len(cal_scores))])
    calibrator = isotonic_fit(scores, targets)
    return GmmCalibrated(gmm=gmm, calibrator=calibrator)
