"""Binary SVM on precomputed Gram matrices, nested CV, and an MLP benchmark.

The SVM dual is solved by sequential minimal optimization with
maximal-violating-pair working-set selection (ties broken by lowest
index), which keeps training deterministic. Indefinite kernels are
handled by stepping to the objective-best endpoint of the feasible
segment whenever the pair's quadratic term is not positive.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .divergence import ChisiniKind
from .kernels import DivergenceKind, GramMatrix, KernelSpec, gram_from_parts

MODEL_MAGIC = b"CKM1"

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_SIGMA_EXPONENTS = tuple(range(-3, 4))  # {2^-3 .. 2^3} * median distance


@dataclass(frozen=True)
class SvmModel:
    alphas: np.ndarray
    bias: float
    support_ids: np.ndarray
    labels: np.ndarray  # +-1
    C: float
    spec: KernelSpec | None = None
    converged: bool = True
    positive_weight: float = 1.0  # per-class box multiplier for the +1 class

    @property
    def n(self) -> int:
        return len(self.alphas)

    def box(self) -> np.ndarray:
        return np.where(self.labels > 0, self.C * self.positive_weight, self.C)


class TrainingError(ValueError):
    pass


def to_pm1(labels: np.ndarray) -> np.ndarray:
    """Map {0,1} labels to {-1,+1}; labels already in +-1 pass through."""
    labels = np.asarray(labels)
    if np.all(np.isin(labels, (-1, 1))):
        return labels.astype(float)
    if np.all(np.isin(labels, (0, 1))):
        return np.where(labels == 1, 1.0, -1.0)
    raise TrainingError("labels must be binary")


def svm_train(
    gram: GramMatrix | np.ndarray,
    labels: np.ndarray,
    C: float,
    tol: float = 1e-3,
    max_iter: int = 200_000,
    positive_weight: float = 1.0,
) -> SvmModel:
    """SMO on the dual of a soft-margin SVM with a precomputed kernel.

    Maximizes sum(alpha) - 0.5 alpha' Q alpha subject to 0 <= alpha_i <=
    C_i and y'alpha = 0, stopping when the maximal KKT violation gap
    drops below ``tol``. ``positive_weight`` scales the box of the +1
    class (imbalance handling; the default of 1 leaves both boxes at C).
    """
    if isinstance(gram, GramMatrix):
        K = gram.values
        spec = gram.spec
    else:
        K = np.asarray(gram, dtype=float)
        spec = None
    n = K.shape[0]
    if K.shape != (n, n):
        raise TrainingError("gram matrix must be square")
    if not np.allclose(K, K.T, atol=1e-12, rtol=0.0):
        raise TrainingError("gram matrix must be symmetric")
    y = to_pm1(labels)
    if len(y) != n:
        raise TrainingError("labels must align with the gram matrix")
    if n < 2 or len(np.unique(y)) < 2:
        raise TrainingError("need both classes to train")
    if C <= 0 or positive_weight <= 0:
        raise TrainingError("C and the class multiplier must be positive")
    box = np.where(y > 0, C * positive_weight, C)

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the minimization objective 0.5 a'Qa - e'a
    converged = False
    for _ in range(max_iter):
        viol = -y * grad
        in_up = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
        in_low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < box))
        if not in_up.any() or not in_low.any():
            converged = True
            break
        up_vals = np.where(in_up, viol, -np.inf)
        low_vals = np.where(in_low, viol, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        m_up = viol[i]
        m_low = viol[j]
        if m_up - m_low <= tol:
            converged = True
            break

        # Step t along u = y_i e_i - y_j e_j keeps y'alpha constant.
        t_hi = min(
            box[i] - alpha[i] if y[i] > 0 else alpha[i],
            alpha[j] if y[j] > 0 else box[j] - alpha[j],
        )
        t_lo = -min(
            alpha[i] if y[i] > 0 else box[i] - alpha[i],
            box[j] - alpha[j] if y[j] > 0 else alpha[j],
        )
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        gap = m_up - m_low
        if eta > 0:
            t = min(gap / eta, t_hi)
        else:
            # Indefinite pair: the segment endpoint with the better
            # objective (curvature makes the interior a local maximum).
            def obj_delta(step: float) -> float:
                return -gap * step + 0.5 * eta * step * step

            t = t_hi if obj_delta(t_hi) <= obj_delta(t_lo) else t_lo
        if t == 0.0:
            break  # no feasible progress on the most violating pair
        alpha[i] = min(max(alpha[i] + y[i] * t, 0.0), box[i])
        alpha[j] = min(max(alpha[j] - y[j] * t, 0.0), box[j])
        grad += t * y * (K[:, i] - K[:, j])

    viol = -y * grad
    in_up = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
    in_low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < box))
    hi = np.max(np.where(in_up, viol, -np.inf)) if in_up.any() else 0.0
    lo = np.min(np.where(in_low, viol, np.inf)) if in_low.any() else 0.0
    bias = float((hi + lo) / 2.0) if np.isfinite(hi) and np.isfinite(lo) else 0.0
    support = np.flatnonzero(alpha > 0)
    return SvmModel(
        alphas=alpha,
        bias=bias,
        support_ids=support,
        labels=y,
        C=C,
        spec=spec,
        converged=converged,
        positive_weight=positive_weight,
    )


def svm_decision(model: SvmModel, kernel_row: np.ndarray) -> float:
    """sum_i alpha_i y_i K(x, x_i) + bias."""
    kernel_row = np.asarray(kernel_row, dtype=float)
    if kernel_row.shape != (model.n,):
        raise TrainingError("kernel row length mismatch")
    return float(np.dot(model.alphas * model.labels, kernel_row) + model.bias)


def svm_predict(model: SvmModel, kernel_rows: np.ndarray) -> np.ndarray:
    """Predicted +-1 labels for rows of K(x, train); ties go positive."""
    rows = np.atleast_2d(np.asarray(kernel_rows, dtype=float))
    scores = rows @ (model.alphas * model.labels) + model.bias
    return np.where(scores >= 0, 1.0, -1.0)


def dual_objective(alphas: np.ndarray, K: np.ndarray, y: np.ndarray) -> float:
    """Dual value sum(alpha) - 0.5 alpha' (yy' * K) alpha."""
    alphas = np.asarray(alphas, dtype=float)
    ya = alphas * y
    return float(alphas.sum() - 0.5 * ya @ K @ ya)


def kkt_violation(model: SvmModel, K: np.ndarray) -> float:
    """Largest KKT residual of a trained model (0 means exact)."""
    f = K @ (model.alphas * model.labels) + model.bias
    margins = model.labels * f
    box = model.box()
    res = np.zeros(model.n)
    at_zero = model.alphas <= 0
    at_c = model.alphas >= box
    interior = ~at_zero & ~at_c
    res[at_zero] = np.maximum(0.0, 1.0 - margins[at_zero])
    res[interior] = np.abs(margins[interior] - 1.0)
    res[at_c] = np.maximum(0.0, margins[at_c] - 1.0)
    return float(res.max()) if model.n else 0.0


# ---------------------------------------------------------------------------
# Nested cross-validation over the kernel grid.


FAMILY_SEED_OFFSET = {ChisiniKind.AM: 0, ChisiniKind.GM: 1, ChisiniKind.HM: 2}


@dataclass
class SpecResult:
    spec_key: str
    sigma_base: float
    fold_accuracies: list[float]
    chosen_params: list[dict]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def standard_error(self) -> float:
        k = len(self.fold_accuracies)
        return float(np.std(self.fold_accuracies, ddof=1) / np.sqrt(k))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec_key,
            "fold_accuracies": self.fold_accuracies,
            "mean": self.mean,
            "standard_error": self.standard_error,
            "chosen_params": self.chosen_params,
        }


@dataclass
class CvReport:
    folds: int
    seed: int
    results: list[SpecResult] = field(default_factory=list)

    def best(self) -> SpecResult:
        return max(self.results, key=lambda r: (r.mean, -r.standard_error, r.spec_key))

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "seed": self.seed,
            "results": [r.to_dict() for r in self.results],
        }


def _fold_blocks(order: np.ndarray, folds: int) -> list[np.ndarray]:
    sizes = np.full(folds, len(order) // folds)
    sizes[: len(order) % folds] += 1
    blocks = []
    pos = 0
    for s in sizes:
        blocks.append(order[pos : pos + s])
        pos += s
    return blocks


def _median_distance(d2: np.ndarray, idx: np.ndarray) -> float:
    sub = d2[np.ix_(idx, idx)]
    tri = sub[np.triu_indices(len(idx), k=1)]
    tri = tri[tri > 0]
    if tri.size == 0:
        return 1.0
    return float(np.sqrt(np.median(tri)))


def _accuracy(model: SvmModel, K_cross: np.ndarray, y_true: np.ndarray) -> float:
    pred = svm_predict(model, K_cross)
    return float(np.mean(pred == y_true))


def nested_cv(
    data,
    dists,
    specs: list[KernelSpec],
    C_grid: tuple[float, ...] = DEFAULT_C_GRID,
    folds: int = 10,
    seed: int = 0,
    inner_folds: int = 3,
    tol: float = 1e-3,
    sigma_exponents: tuple[int, ...] = DEFAULT_SIGMA_EXPONENTS,
    div_cache: dict | None = None,
    positive_weight: float = 1.0,
) -> CvReport:
    """Outer folds estimate accuracy; inner folds pick (sigma, C) per spec.

    ``data`` is an ingest Dataset or a (vectors, labels) pair; ``dists``
    is the aligned list of per-sample distributions (or a stacked mass
    matrix, or None when only the RBF baseline is evaluated). Each
    Chisini-mean family gets its own dataset shuffle (seed + family
    offset); the RBF baseline runs once per family on that family's
    shuffle. Divergence matrices are cached across the sigma/C search, so
    only the cheap elementwise kernel assembly repeats.
    """
    from .divergence import cjsd_matrix
    from .kernels import squared_distances

    if folds < 2:
        raise TrainingError("need at least two folds")
    if hasattr(data, "vectors"):
        vectors, labels = data.vectors, data.labels
    else:
        vectors, labels = data
    vectors = np.asarray(vectors, dtype=float)
    masses = None
    if dists is not None:
        masses = (
            np.asarray(dists, dtype=float)
            if isinstance(dists, np.ndarray)
            else np.stack([d.mass for d in dists])
        )
    y = to_pm1(labels)
    n = len(y)
    if n < folds:
        raise TrainingError("more folds than instances")
    d2 = squared_distances(vectors)

    # Divergence matrices are sigma-independent; callers holding matrices
    # from a previous run can preseed the cache to skip recomputation.
    if div_cache is None:
        div_cache = {}

    def div_matrix(spec: KernelSpec) -> np.ndarray | None:
        if spec.is_rbf:
            return None
        key = (spec.mean, spec.divergence)
        if key not in div_cache:
            base = (spec.mean, DivergenceKind.CJSD)
            if base not in div_cache:
                if masses is None:
                    raise TrainingError("divergence kernels need distributions")
                div_cache[base] = cjsd_matrix(masses, spec.mean)
            if spec.divergence is DivergenceKind.MCJSD:
                div_cache[key] = np.sqrt(div_cache[base])
        return div_cache[key]

    perms = {
        kind: np.random.default_rng(seed + FAMILY_SEED_OFFSET[kind]).permutation(n)
        for kind in ChisiniKind
    }

    report = CvReport(folds=folds, seed=seed)
    for spec in specs:
        order = perms[spec.mean]
        blocks = _fold_blocks(order, folds)
        div = div_matrix(spec)
        gram_cache: dict[float, np.ndarray] = {}

        def kernel_at(sigma: float) -> np.ndarray:
            if sigma not in gram_cache:
                gram_cache[sigma] = gram_from_parts(d2, div, spec.with_sigma(sigma))
            return gram_cache[sigma]

        fold_acc: list[float] = []
        chosen: list[dict] = []
        for k in range(folds):
            test_idx = blocks[k]
            train_idx = np.concatenate([blocks[m] for m in range(folds) if m != k])
            if len(np.unique(y[test_idx])) < 2 or len(np.unique(y[train_idx])) < 2:
                raise TrainingError(f"fold {k} has a single class")
            med = _median_distance(d2, train_idx)
            sigma_grid = [med * (2.0 ** e) for e in sigma_exponents]
            inner_blocks = _fold_blocks(train_idx, inner_folds)

            best = None  # (score, sigma_pos, c_pos)
            for si, sigma in enumerate(sigma_grid):
                K = kernel_at(sigma)
                for ci, C in enumerate(C_grid):
                    scores = []
                    for b in range(inner_folds):
                        val_i = inner_blocks[b]
                        tr_i = np.concatenate(
                            [inner_blocks[m] for m in range(inner_folds) if m != b]
                        )
                        if len(np.unique(y[tr_i])) < 2 or len(val_i) == 0:
                            continue
                        model = svm_train(
                            K[np.ix_(tr_i, tr_i)], y[tr_i], C,
                            tol=tol, positive_weight=positive_weight,
                        )
                        scores.append(
                            _accuracy(model, K[np.ix_(val_i, tr_i)], y[val_i])
                        )
                    score = float(np.mean(scores)) if scores else -1.0
                    cand = (score, -si, -ci)
                    if best is None or cand > best[0]:
                        best = (cand, sigma, C)
            _, sigma_star, c_star = best
            K = kernel_at(sigma_star)
            model = svm_train(
                K[np.ix_(train_idx, train_idx)], y[train_idx], c_star,
                tol=tol, positive_weight=positive_weight,
            )
            fold_acc.append(_accuracy(model, K[np.ix_(test_idx, train_idx)], y[test_idx]))
            chosen.append({"sigma": sigma_star, "C": c_star})
        report.results.append(
            SpecResult(
                spec_key=spec.key(),
                sigma_base=1.0,
                fold_accuracies=fold_acc,
                chosen_params=chosen,
            )
        )
    return report


# ---------------------------------------------------------------------------
# Small feedforward benchmark.


@dataclass
class MlpModel:
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float
    seed: int
    loss_trace: list[float] = field(default_factory=list)


def _mlp_init(d: int, h: int, seed: int) -> MlpModel:
    rng = np.random.default_rng(seed)
    return MlpModel(
        w1=rng.normal(0.0, np.sqrt(2.0 / d), size=(h, d)),
        b1=np.zeros(h),
        w2=rng.normal(0.0, np.sqrt(1.0 / h), size=h),
        b2=0.0,
        seed=seed,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Probability of the positive class."""
    hidden = np.maximum(X @ model.w1.T + model.b1, 0.0)
    return _sigmoid(hidden @ model.w2 + model.b2)


def mlp_loss_and_grads(model: MlpModel, X: np.ndarray, t: np.ndarray):
    """Cross-entropy loss and analytic gradients (rectifier hidden layer).

    Overflow is not trapped here; a diverging run surfaces as a non-finite
    loss which the training loop reports explicitly.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        z1 = X @ model.w1.T + model.b1
        hidden = np.maximum(z1, 0.0)
        logits = hidden @ model.w2 + model.b2
        p = _sigmoid(logits)
        eps = 1e-12
        loss = -float(np.mean(t * np.log(p + eps) + (1 - t) * np.log(1 - p + eps)))
        m = len(t)
        dlogits = (p - t) / m
        gw2 = hidden.T @ dlogits
        gb2 = float(dlogits.sum())
        dhidden = np.outer(dlogits, model.w2)
        dhidden[z1 <= 0] = 0.0
        gw1 = dhidden.T @ X
        gb1 = dhidden.sum(axis=0)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


def mlp_train(
    X: np.ndarray,
    labels: np.ndarray,
    h: int = 8,
    epochs: int = 200,
    lr: float = 0.5,
    seed: int = 0,
    batch_size: int = 0,
) -> MlpModel:
    """Mini-batch gradient descent on cross-entropy; deterministic per seed.

    ``batch_size`` 0 trains full-batch. Zero epochs returns the seeded
    initialization untouched.
    """
    if h < 1:
        raise TrainingError("need at least one hidden unit")
    X = np.asarray(X, dtype=float)
    t = np.asarray(labels, dtype=float)
    t = np.where(t > 0, 1.0, 0.0)
    n, d = X.shape
    model = _mlp_init(d, h, seed)
    if epochs == 0:
        return model
    rng = np.random.default_rng(seed + 1)
    bs = n if batch_size <= 0 else min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, g = mlp_loss_and_grads(model, X[idx], t[idx])
            if not np.isfinite(loss):
                raise TrainingError("training diverged: non-finite loss")
            with np.errstate(over="ignore"):
                model.w1 -= lr * g["w1"]
                model.b1 -= lr * g["b1"]
                model.w2 -= lr * g["w2"]
                model.b2 -= lr * g["b2"]
        epoch_loss, _ = mlp_loss_and_grads(model, X, t)
        if not np.isfinite(epoch_loss):
            raise TrainingError("training diverged: non-finite loss")
        model.loss_trace.append(epoch_loss)
    return model


def mlp_predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return (mlp_forward(model, np.asarray(X, dtype=float)) >= 0.5).astype(int)


# ---------------------------------------------------------------------------
# Model serialization (versioned binary, magic CKM1).


def save_svm_model(path, model: SvmModel) -> None:
    header = {
        "version": 1,
        "n": model.n,
        "bias": model.bias,
        "C": model.C,
        "positive_weight": model.positive_weight,
        "converged": model.converged,
        "spec": None
        if model.spec is None
        else {
            "family": model.spec.family.value,
            "divergence": model.spec.divergence.value,
            "mean": model.spec.mean.value,
            "sigma": model.spec.sigma,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.alphas.astype("<f8").tobytes())
        fh.write(model.labels.astype("<i1").tobytes())
        fh.write(struct.pack("<I", len(model.support_ids)))
        fh.write(model.support_ids.astype("<u4").tobytes())


def load_svm_model(path) -> SvmModel:
    from .kernels import KernelFamily

    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise TrainingError("not a model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        n = header["n"]
        alphas = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        labels = np.frombuffer(fh.read(n), dtype="<i1").astype(float)
        (n_sv,) = struct.unpack("<I", fh.read(4))
        support = np.frombuffer(fh.read(4 * n_sv), dtype="<u4").astype(np.int64)
    spec = None
    if header["spec"] is not None:
        s = header["spec"]
        spec = KernelSpec(
            family=KernelFamily(s["family"]),
            divergence=DivergenceKind(s["divergence"]),
            mean=ChisiniKind(s["mean"]),
            sigma=s["sigma"],
        )
    return SvmModel(
        alphas=alphas,
        bias=header["bias"],
        support_ids=support,
        labels=labels,
        C=header["C"],
        spec=spec,
        converged=header["converged"],
        positive_weight=header.get("positive_weight", 1.0),
    )
