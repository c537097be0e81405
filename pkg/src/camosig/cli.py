"""Command-line pipeline: ingest -> encode -> describe -> train/detect -> report.

One INI config drives the full before/after-encoding experiment matrix;
every stage is also exposed as a subcommand on explicit inputs so runs
can be resumed piecewise. Reports are deterministic for a fixed config
and seeds: a digest over the timing-stripped payload is stored alongside
wall-clock numbers, which are informational only.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, anomaly, classify, divergence, encode, evaluation, features, ingest
from .ingest import Dataset, Pairing
from .kernels import (
    GramMatrix,
    KernelSpec,
    enumerate_specs,
    gram_from_parts,
    load_gram,
    save_gram,
    squared_distances,
)

EXIT_OK = 0
EXIT_CELL_FAILURES = 1
EXIT_USAGE = 2


@dataclass
class RunConfig:
    """Everything one experiment run needs; parsed from an INI file."""

    source: str = "synth"
    csv_path: str = ""
    rows: int = 2000
    segments: int = 20
    gesture_fraction: float = 0.3548
    data_seed: int = 7

    pairings: list[str] = field(default_factory=lambda: [p.tag for p in Pairing])
    data_types: list[str] = field(default_factory=lambda: ["signal", "image", "audio"])
    train_fraction: float = 0.75
    split_seed: int = 11
    max_instances: int = 320
    workers: int = 1

    bit_depth: int = 8
    sample_rate: int = encode.DEFAULT_SAMPLE_RATE
    dwell_ms: float = encode.DEFAULT_DWELL_MS
    write_artifacts: bool = False

    gist_resize: int = 0
    pca_components: int = 30

    classify_enabled: bool = True
    folds: int = 10
    inner_folds: int = 3
    c_grid: tuple[float, ...] = classify.DEFAULT_C_GRID
    cv_seed: int = 101
    kernel_keys: str = "all"
    mlp_enabled: bool = True
    positive_c_multiplier: float = 1.0
    psd_diagnostics: bool = False

    detect_enabled: bool = True
    train_class: int = ingest.GESTURE
    nu: float = 0.1
    ocsvm_threshold: float = 0.0
    n_trees: int = 100
    psi: int = 256
    detect_seed: int = 202

    def seeds(self) -> dict:
        return {
            "data": self.data_seed,
            "split": self.split_seed,
            "cv": self.cv_seed,
            "detect": self.detect_seed,
        }

    def to_echo(self) -> dict:
        """Config as echoed into the report (stable ordering).

        Execution knobs that cannot change results (worker count) stay
        out, so the determinism digest is invariant under parallelism.
        """
        d = dict(vars(self))
        d["c_grid"] = list(self.c_grid)
        d.pop("workers")
        return d


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)
    cfg = RunConfig()

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        return default

    cfg.source = get("data", "source", str, cfg.source)
    cfg.csv_path = get("data", "csv_path", str, cfg.csv_path)
    cfg.rows = get("data", "rows", int, cfg.rows)
    cfg.segments = get("data", "segments", int, cfg.segments)
    cfg.gesture_fraction = get("data", "gesture_fraction", float, cfg.gesture_fraction)
    cfg.data_seed = get("data", "seed", int, cfg.data_seed)

    split_list = lambda raw: [s.strip() for s in raw.split(",") if s.strip()]
    cfg.pairings = get("run", "pairings", split_list, cfg.pairings)
    cfg.data_types = get("run", "data_types", split_list, cfg.data_types)
    cfg.train_fraction = get("run", "train_fraction", float, cfg.train_fraction)
    cfg.split_seed = get("run", "split_seed", int, cfg.split_seed)
    cfg.max_instances = get("run", "max_instances", int, cfg.max_instances)
    cfg.workers = get("run", "workers", int, cfg.workers)

    cfg.bit_depth = get("encode", "bit_depth", int, cfg.bit_depth)
    cfg.sample_rate = get("encode", "sample_rate", int, cfg.sample_rate)
    cfg.dwell_ms = get("encode", "dwell_ms", float, cfg.dwell_ms)
    cfg.write_artifacts = get("encode", "write_artifacts", bool, cfg.write_artifacts)

    cfg.gist_resize = get("features", "gist_resize", int, cfg.gist_resize)
    cfg.pca_components = get("features", "pca_components", int, cfg.pca_components)

    cfg.classify_enabled = get("classify", "enabled", bool, cfg.classify_enabled)
    cfg.folds = get("classify", "folds", int, cfg.folds)
    cfg.inner_folds = get("classify", "inner_folds", int, cfg.inner_folds)
    cfg.c_grid = get(
        "classify", "c_grid", lambda raw: tuple(float(v) for v in raw.split(",")), cfg.c_grid
    )
    cfg.cv_seed = get("classify", "cv_seed", int, cfg.cv_seed)
    cfg.kernel_keys = get("classify", "kernels", str, cfg.kernel_keys)
    cfg.mlp_enabled = get("classify", "mlp", bool, cfg.mlp_enabled)
    cfg.positive_c_multiplier = get(
        "classify", "positive_c_multiplier", float, cfg.positive_c_multiplier
    )
    cfg.psd_diagnostics = get("classify", "psd_diagnostics", bool, cfg.psd_diagnostics)

    cfg.detect_enabled = get("detect", "enabled", bool, cfg.detect_enabled)
    cfg.train_class = get("detect", "train_class", int, cfg.train_class)
    cfg.nu = get("detect", "nu", float, cfg.nu)
    cfg.ocsvm_threshold = get("detect", "threshold", float, cfg.ocsvm_threshold)
    cfg.n_trees = get("detect", "n_trees", int, cfg.n_trees)
    cfg.psi = get("detect", "psi", int, cfg.psi)
    cfg.detect_seed = get("detect", "seed", int, cfg.detect_seed)
    return cfg


# ---------------------------------------------------------------------------
# Pipeline building blocks.


def _subsample(ds: Dataset, cap: int, seed: int) -> Dataset:
    """Stratified, seeded cap on the instance count (0 disables)."""
    if cap <= 0 or len(ds) <= cap:
        return ds
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    labels = np.unique(ds.labels)
    for c in labels:
        members = np.flatnonzero(ds.labels == c)
        want = max(2, int(round(cap * len(members) / len(ds))))
        keep.append(rng.choice(members, size=min(want, len(members)), replace=False))
    idx = np.sort(np.concatenate(keep))
    from dataclasses import replace

    return replace(ds, vectors=ds.vectors[idx], labels=ds.labels[idx])


def _image_features(vectors: np.ndarray, cfg: RunConfig, pairing: Pairing, outdir: Path | None):
    grid = 4 if encode.pad_signal(np.zeros(pairing.dim)).size >= 16 else 3
    params = features.GistParams(resize_to=cfg.gist_resize, grid=grid)
    rows = []
    for i, v in enumerate(vectors):
        img = encode.signal_to_image(v, bit_depth=cfg.bit_depth)
        if outdir is not None:
            encode.write_pgm(outdir / f"img_{i:06d}.pgm", img)
        rows.append(features.gist_descriptor(img, params))
    return np.asarray(rows)


def _audio_features(vectors: np.ndarray, cfg: RunConfig, pairing: Pairing, outdir: Path | None):
    duration = encode.target_duration_for(pairing.dim)
    rows = []
    for i, v in enumerate(vectors):
        clip = encode.signal_to_audio(
            v,
            sample_rate=cfg.sample_rate,
            dwell_ms=cfg.dwell_ms,
            target_duration_s=duration,
        )
        if outdir is not None:
            encode.write_wav(outdir / f"clip_{i:06d}.wav", clip)
        rows.append(features.mfcc_descriptor(clip))
    return np.asarray(rows)


def _build_representation(
    data_type: str,
    train: Dataset,
    val: Dataset,
    cfg: RunConfig,
    pairing: Pairing,
    artifact_dir: Path | None,
):
    """Feature matrices for one (data_type, pairing) cell."""
    if data_type == "signal":
        return train.vectors, val.vectors
    if data_type == "image":
        tr_dir = va_dir = None
        if artifact_dir is not None:
            tr_dir = artifact_dir / "train"
            va_dir = artifact_dir / "validation"
            tr_dir.mkdir(parents=True, exist_ok=True)
            va_dir.mkdir(parents=True, exist_ok=True)
        tr = _image_features(train.vectors, cfg, pairing, tr_dir)
        va = _image_features(val.vectors, cfg, pairing, va_dir)
        k = min(cfg.pca_components, tr.shape[1], len(tr) - 1)
        model = features.pca_fit(tr, k)
        return features.pca_transform(model, tr), features.pca_transform(model, va)
    if data_type == "audio":
        tr_dir = va_dir = None
        if artifact_dir is not None:
            tr_dir = artifact_dir / "train"
            va_dir = artifact_dir / "validation"
            tr_dir.mkdir(parents=True, exist_ok=True)
            va_dir.mkdir(parents=True, exist_ok=True)
        tr = _audio_features(train.vectors, cfg, pairing, tr_dir)
        va = _audio_features(val.vectors, cfg, pairing, va_dir)
        return tr, va
    raise ValueError(f"unknown data type: {data_type!r}")


def _distributions(train_feats: np.ndarray, val_feats: np.ndarray):
    """Per-sample KDE mass matrices on a grid shared by the whole cell."""
    pooled = np.vstack([train_feats, val_feats])
    grid = divergence.make_grid(pooled)
    def masses(mat):
        return np.stack(
            [divergence.sample_to_distribution(row, grid).mass for row in mat]
        )
    return grid, masses(train_feats), masses(val_feats)


def _cell_assets(
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    data_type: str,
    pairing: Pairing,
    cache_dir: Path,
    artifact_dir: Path | None,
    need_divergence: bool,
) -> tuple[dict, bool]:
    """Representation, KDE masses, and divergence bases for one cell.

    Results are cached on disk keyed by the cell's inputs; a rerun with
    identical config and data loads the cache and skips every expensive
    recomputation. Cache files are written atomically.
    """
    hasher = hashlib.sha256()
    hasher.update(train.vectors.tobytes())
    hasher.update(val.vectors.tobytes())
    hasher.update(train.labels.tobytes())
    hasher.update(val.labels.tobytes())
    hasher.update(
        f"{data_type}|{pairing.tag}|{cfg.bit_depth}|{cfg.sample_rate}|"
        f"{cfg.dwell_ms}|{cfg.gist_resize}|{cfg.pca_components}|{need_divergence}".encode()
    )
    cache_path = cache_dir / f"cell-{hasher.hexdigest()[:24]}.npz"
    if cache_path.exists():
        with np.load(cache_path) as z:
            return {k: z[k] for k in z.files}, True

    train_feats, val_feats = _build_representation(
        data_type, train, val, cfg, pairing, artifact_dir
    )
    assets = {"train_feats": train_feats, "val_feats": val_feats}
    if need_divergence:
        _, train_masses, val_masses = _distributions(train_feats, val_feats)
        assets["train_masses"] = train_masses
        assets["val_masses"] = val_masses
        for kind in divergence.ChisiniKind:
            assets[f"div_{kind.value}"] = divergence.cjsd_matrix(train_masses, kind)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = cache_path.with_suffix(".tmp.npz")
    np.savez(tmp, **assets)
    tmp.replace(cache_path)
    return assets, False


def _cross_kernel_rows(
    spec: KernelSpec,
    val_feats: np.ndarray,
    train_feats: np.ndarray,
    val_masses: np.ndarray | None,
    train_masses: np.ndarray | None,
) -> np.ndarray:
    d2 = squared_distances(val_feats, train_feats)
    if spec.is_rbf:
        return np.exp(-d2 / (2.0 * spec.sigma**2))
    div = divergence.cjsd_cross(val_masses, train_masses, spec.mean)
    if spec.divergence.value == "mcjsd":
        div = np.sqrt(div)
    s2 = 2.0 * spec.sigma**2
    if spec.family.value == "amplified":
        return div * np.exp(-d2 / s2)
    if spec.family.value == "scaled":
        return np.exp(-div * d2 / s2)
    return div * np.exp(-div * d2 / s2)


def _metrics_payload(cm: evaluation.ConfusionMatrix) -> dict:
    return {"confusion": cm.to_dict(), "metrics": evaluation.metrics(cm)}


def _classification_cell(
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    assets: dict,
    cell_dir: Path,
) -> dict:
    from .divergence import ChisiniKind
    from .kernels import DivergenceKind

    specs = enumerate_specs()
    if cfg.kernel_keys != "all":
        wanted = {k.strip() for k in cfg.kernel_keys.split(",")}
        specs = [s for s in specs if s.key() in wanted]
        if not specs:
            raise ValueError("kernel filter matched nothing")
    train_feats = assets["train_feats"]
    val_feats = assets["val_feats"]
    train_masses = assets.get("train_masses")
    val_masses = assets.get("val_masses")
    div_cache = {
        (kind, DivergenceKind.CJSD): assets[f"div_{kind.value}"]
        for kind in ChisiniKind
        if f"div_{kind.value}" in assets
    }

    report = classify.nested_cv(
        (train_feats, train.labels),
        train_masses,
        specs,
        C_grid=cfg.c_grid,
        folds=cfg.folds,
        seed=cfg.cv_seed,
        inner_folds=cfg.inner_folds,
        div_cache=div_cache,
        positive_weight=cfg.positive_c_multiplier,
    )
    best = report.best()

    # Validation metrics for the best spec, trained on the full train cell
    # with that spec's most frequently chosen hyperparameters.
    chosen = best.chosen_params
    sigma_star = sorted(
        {p["sigma"] for p in chosen},
        key=lambda s: (-sum(1 for p in chosen if p["sigma"] == s), s),
    )[0]
    c_star = sorted(
        {p["C"] for p in chosen},
        key=lambda c: (-sum(1 for p in chosen if p["C"] == c), c),
    )[0]
    best_spec = next(s for s in specs if s.key() == best.spec_key).with_sigma(sigma_star)

    cell_dir.mkdir(parents=True, exist_ok=True)
    gram_path = cell_dir / "gram.bin"
    K_gram = None
    if gram_path.exists():
        cached = load_gram(gram_path)
        if cached.spec == best_spec and cached.n == len(train_feats):
            K_gram = cached
    if K_gram is None:
        div = div_cache.get((best_spec.mean, DivergenceKind.CJSD))
        if div is not None and best_spec.divergence is DivergenceKind.MCJSD:
            div = np.sqrt(div)
        K = gram_from_parts(squared_distances(train_feats), div, best_spec)
        K_gram = GramMatrix(values=K, spec=best_spec, instance_ids=np.arange(len(train_feats)))
        tmp = gram_path.with_suffix(".tmp")
        save_gram(tmp, K_gram)
        tmp.replace(gram_path)
    y_train = classify.to_pm1(train.labels)
    model = classify.svm_train(
        K_gram, y_train, c_star, positive_weight=cfg.positive_c_multiplier
    )
    rows = _cross_kernel_rows(best_spec, val_feats, train_feats, val_masses, train_masses)
    pred = classify.svm_predict(model, rows)
    y_val = classify.to_pm1(val.labels)
    cm = evaluation.confusion(y_val, pred, positive_class=1)

    payload = {
        "cv": report.to_dict(),
        "best_spec": best.spec_key,
        "best_params": {"sigma": sigma_star, "C": c_star},
        "validation": _metrics_payload(cm),
    }
    if cfg.psd_diagnostics:
        w = np.linalg.eigvalsh(K_gram.values)
        payload["psd_diagnostics"] = {
            "min_eigenvalue": float(w.min()),
            "max_eigenvalue": float(w.max()),
            "negative_mass": float(np.abs(w[w < 0]).sum() / max(np.abs(w).sum(), 1e-300)),
        }
    (cell_dir / "confusion.json").write_text(json.dumps(cm.to_dict(), sort_keys=True))
    return payload


def _mlp_cell(
    train: Dataset, val: Dataset, train_feats: np.ndarray, val_feats: np.ndarray, cell_dir: Path
) -> dict:
    model = classify.mlp_train(
        train_feats, train.labels, h=16, epochs=300, lr=0.3, seed=5, batch_size=64
    )
    pred = classify.mlp_predict(model, val_feats)
    cm = evaluation.confusion(val.labels, pred, positive_class=ingest.GESTURE)
    scores = classify.mlp_forward(model, val_feats)
    payload = _metrics_payload(cm)
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "confusion.json").write_text(json.dumps(cm.to_dict(), sort_keys=True))
    if len(np.unique(val.labels)) == 2:
        fpr, tpr, thr, auc = evaluation.roc_curve(scores, val.labels, ingest.GESTURE)
        evaluation.write_curve_csv(cell_dir / "roc.csv", thr, fpr, tpr)
        payload["auc"] = auc
    return payload


def _detector_eval(
    name: str,
    score_fn,
    threshold: float,
    eval_feats: np.ndarray,
    eval_truth: np.ndarray,
    cell_dir: Path,
) -> dict:
    result = anomaly.detect(score_fn, eval_feats, threshold)
    cm = evaluation.confusion(eval_truth, result.labels, positive_class=1)
    payload = _metrics_payload(cm)
    payload["threshold"] = threshold
    cell_dir.mkdir(parents=True, exist_ok=True)
    (cell_dir / "confusion.json").write_text(json.dumps(cm.to_dict(), sort_keys=True))
    with open(cell_dir / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write("score,predicted,truth\n")
        for s, p, t in zip(result.scores, result.labels, eval_truth):
            fh.write(f"{float(s)!r},{int(p)},{int(t)}\n")
    if len(np.unique(eval_truth)) == 2:
        fpr, tpr, thr, auc = evaluation.roc_curve(result.scores, eval_truth, 1)
        evaluation.write_curve_csv(cell_dir / "roc.csv", thr, fpr, tpr)
        rec, prec, pthr = evaluation.pr_curve(result.scores, eval_truth, 1)
        evaluation.write_curve_csv(cell_dir / "pr.csv", pthr, rec, prec)
        payload["auc"] = auc
    return payload


def _detection_cells(
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    train_feats: np.ndarray,
    val_feats: np.ndarray,
    cells_dir: Path,
    key_prefix: str,
) -> dict:
    """Novelty protocol: fit on train-split positives, evaluate on the
    held-out positives plus every negative instance."""
    pos = cfg.train_class
    fit_feats = train_feats[train.labels == pos]
    eval_feats = np.vstack(
        [
            val_feats[val.labels == pos],
            train_feats[train.labels != pos],
            val_feats[val.labels != pos],
        ]
    )
    eval_truth = np.concatenate(
        [
            np.ones(int(np.sum(val.labels == pos)), dtype=int),
            np.zeros(int(np.sum(train.labels != pos)), dtype=int),
            np.zeros(int(np.sum(val.labels != pos)), dtype=int),
        ]
    )
    if len(fit_feats) < 2 or len(eval_feats) == 0:
        raise ValueError("not enough instances for the novelty protocol")

    out = {}
    sigma = anomaly.median_heuristic_sigma(fit_feats)
    oc = anomaly.ocsvm_train(fit_feats, nu=cfg.nu, sigma=sigma)
    out["ocsvm"] = _detector_eval(
        "ocsvm",
        lambda x: anomaly.ocsvm_decision(oc, x),
        cfg.ocsvm_threshold,
        eval_feats,
        eval_truth,
        cells_dir / f"{key_prefix}-ocsvm",
    )
    forest = anomaly.iforest_train(
        fit_feats, n_trees=cfg.n_trees, psi=cfg.psi, seed=cfg.detect_seed
    )
    out["iforest"] = _detector_eval(
        "iforest",
        lambda x: 1.0 - anomaly.iforest_score(forest, x),
        0.5,
        eval_feats,
        eval_truth,
        cells_dir / f"{key_prefix}-iforest",
    )
    gmm = anomaly.fit_gmm_calibrated(fit_feats, seed=cfg.detect_seed)
    out["gmm_isotonic"] = _detector_eval(
        "gmm_isotonic",
        gmm.inlier_score,
        0.5,
        eval_feats,
        eval_truth,
        cells_dir / f"{key_prefix}-gmm_isotonic",
    )
    return out


def run_pipeline(cfg: RunConfig, out_dir) -> tuple[int, dict]:
    """Full experiment matrix; returns (exit_code, report)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    started = time.perf_counter()

    if cfg.source == "synth":
        frame = ingest.synthesize_recording(
            ingest.GeneratorConfig(
                rows=cfg.rows,
                segments=cfg.segments,
                gesture_fraction=cfg.gesture_fraction,
            ),
            seed=cfg.data_seed,
        )
    else:
        frame = ingest.parse_recording(cfg.csv_path)

    cells: dict[str, dict] = {}
    failures: dict[str, str] = {}
    timings: dict[str, float] = {}

    tasks = []
    for pairing_tag in cfg.pairings:
        pairing = Pairing.from_tag(pairing_tag)
        ds = ingest.preprocess(ingest.fuse_channels(frame, pairing, seed=cfg.data_seed))
        ds = _subsample(ds, cfg.max_instances, cfg.split_seed)
        train, val = ingest.split(ds, cfg.train_fraction, cfg.split_seed)
        for data_type in cfg.data_types:
            tasks.append((pairing, data_type, train, val))

    cache_dir = out / "cache"
    cache_hits = 0

    def run_cell(task):
        pairing, data_type, train, val = task
        base_key = f"{data_type}|{pairing.tag}"
        local_cells = {}
        local_fail = {}
        t0 = time.perf_counter()
        artifact_dir = None
        if cfg.write_artifacts and data_type in ("image", "audio"):
            artifact_dir = out / "artifacts" / pairing.tag / data_type
        needs_div = cfg.classify_enabled and cfg.kernel_keys != "rbf-only"
        try:
            assets, hit = _cell_assets(
                cfg, train, val, data_type, pairing, cache_dir, artifact_dir, needs_div
            )
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            local_fail[base_key] = f"representation failed: {exc}"
            return local_cells, local_fail, {base_key: time.perf_counter() - t0}, 0
        train_feats = assets["train_feats"]
        val_feats = assets["val_feats"]
        times = {}
        if cfg.classify_enabled:
            key = f"svm|{base_key}"
            c0 = time.perf_counter()
            try:
                local_cells[key] = _classification_cell(
                    cfg, train, val, assets, cells_dir / key.replace("|", "-")
                )
            except Exception as exc:  # noqa: BLE001
                local_fail[key] = str(exc)
            times[key] = time.perf_counter() - c0
        if cfg.mlp_enabled:
            key = f"mlp|{base_key}"
            c0 = time.perf_counter()
            try:
                local_cells[key] = _mlp_cell(
                    train, val, train_feats, val_feats, cells_dir / key.replace("|", "-")
                )
            except Exception as exc:  # noqa: BLE001
                local_fail[key] = str(exc)
            times[key] = time.perf_counter() - c0
        if cfg.detect_enabled:
            c0 = time.perf_counter()
            try:
                det = _detection_cells(
                    cfg, train, val, train_feats, val_feats, cells_dir,
                    f"detect-{base_key.replace('|', '-')}",
                )
                for name, payload in det.items():
                    local_cells[f"detect-{name}|{base_key}"] = payload
            except Exception as exc:  # noqa: BLE001
                local_fail[f"detect|{base_key}"] = str(exc)
            times[f"detect|{base_key}"] = time.perf_counter() - c0
        return local_cells, local_fail, times, int(hit)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(run_cell, tasks))
    else:
        outcomes = [run_cell(t) for t in tasks]
    for local_cells, local_fail, times, hit in outcomes:
        cells.update(local_cells)
        failures.update(local_fail)
        timings.update(times)
        cache_hits += hit

    config_echo = cfg.to_echo()
    payload = {
        "config": config_echo,
        "provenance": {
            "config_hash": hashlib.sha256(
                json.dumps(config_echo, sort_keys=True).encode("utf-8")
            ).hexdigest(),
            "seeds": cfg.seeds(),
            "versions": {"camosig": __version__},
        },
        "cells": {k: cells[k] for k in sorted(cells)},
        "failures": {k: failures[k] for k in sorted(failures)},
    }
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()
    report = dict(payload)
    report["determinism_digest"] = digest
    # Environment-dependent facts live outside the digested payload.
    report["info"] = {
        "timings_s": {k: timings[k] for k in sorted(timings)},
        "total_s": time.perf_counter() - started,
        "cache_hits": cache_hits,
    }
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    return (EXIT_CELL_FAILURES if failures else EXIT_OK), report


# ---------------------------------------------------------------------------
# Subcommands.


def _cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    frame = ingest.synthesize_recording(
        ingest.GeneratorConfig(
            rows=args.rows or cfg.rows,
            segments=args.segments or cfg.segments,
            gesture_fraction=cfg.gesture_fraction,
        ),
        seed=args.seed if args.seed is not None else cfg.data_seed,
    )
    ingest.write_recording(args.out, frame)
    print(f"wrote {len(frame)} rows to {args.out}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    frame = ingest.parse_recording(args.input)
    ds = ingest.preprocess(
        ingest.fuse_channels(frame, Pairing.from_tag(args.pairing))
    )
    features.write_descriptors_csv(args.out, ds.vectors, ds.labels)
    print(f"wrote {len(ds)} fused instances to {args.out}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    vectors, labels = features.read_descriptors_csv(args.input)
    if args.pairing:
        expected = Pairing.from_tag(args.pairing).dim
        if vectors.shape[1] != expected:
            raise ValueError(
                f"pairing {args.pairing} expects {expected}-dim instances, "
                f"input has {vectors.shape[1]}"
            )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    index_lines = ["filename,label"]
    for i, v in enumerate(vectors):
        if args.type == "image":
            name = f"img_{i:06d}.pgm"
            encode.write_pgm(outdir / name, encode.signal_to_image(v, args.bit_depth))
        else:
            name = f"clip_{i:06d}.wav"
            clip = encode.signal_to_audio(
                v,
                sample_rate=args.sample_rate,
                dwell_ms=args.dwell_ms,
                target_duration_s=encode.target_duration_for(len(v)),
            )
            encode.write_wav(outdir / name, clip)
        index_lines.append(f"{name},{int(labels[i])}")
    (outdir / "index.csv").write_text("\n".join(index_lines) + "\n")
    print(f"wrote {len(vectors)} {args.type} artifacts to {outdir}")
    return EXIT_OK


def _cmd_features(args) -> int:
    indir = Path(args.input)
    index = (indir / "index.csv").read_text().strip().splitlines()[1:]
    rows = []
    labels = []
    for line in index:
        name, label = line.rsplit(",", 1)
        labels.append(int(label))
        if name.endswith(".pgm"):
            img = encode.read_pgm(indir / name)
            params = features.GistParams(
                resize_to=args.gist_resize,
                grid=args.grid if args.grid else (4 if img.side >= 4 else 3),
            )
            rows.append(features.gist_descriptor(img, params))
        else:
            clip = encode.read_wav(indir / name)
            rows.append(features.mfcc_descriptor(clip))
    mat = np.asarray(rows)
    if args.pca:
        model = features.pca_fit(mat, min(args.pca, mat.shape[1], len(mat) - 1))
        mat = features.pca_transform(model, mat)
    features.write_descriptors_csv(args.out, mat, np.asarray(labels))
    print(f"wrote {mat.shape[0]}x{mat.shape[1]} descriptors to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    vectors, labels = features.read_descriptors_csv(args.input)
    specs = enumerate_specs()
    if args.kernels != "all":
        wanted = {k.strip() for k in args.kernels.split(",")}
        specs = [s for s in specs if s.key() in wanted]
    masses = None
    if any(not s.is_rbf for s in specs):
        grid = divergence.make_grid(vectors)
        masses = np.stack(
            [divergence.sample_to_distribution(row, grid).mass for row in vectors]
        )
    report = classify.nested_cv(
        (vectors, labels),
        masses,
        specs,
        folds=args.folds,
        seed=args.seed,
        inner_folds=args.inner_folds,
    )
    Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    best = report.best()
    print(f"best kernel {best.spec_key}: accuracy {best.mean:.4f} +- {best.standard_error:.4f}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    vectors, labels = features.read_descriptors_csv(args.input)
    pos = args.train_class
    fit = vectors[labels == pos]
    train_n = int(round(0.75 * len(fit)))
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(fit))
    fit_train = fit[order[:train_n]]
    eval_feats = np.vstack([fit[order[train_n:]], vectors[labels != pos]])
    eval_truth = np.concatenate(
        [np.ones(len(fit) - train_n, dtype=int), np.zeros(int(np.sum(labels != pos)), dtype=int)]
    )
    if args.detector == "ocsvm":
        sigma = anomaly.median_heuristic_sigma(fit_train)
        model = anomaly.ocsvm_train(fit_train, nu=args.nu, sigma=sigma)
        score_fn = lambda x: anomaly.ocsvm_decision(model, x)
        threshold = 0.0
    elif args.detector == "iforest":
        forest = anomaly.iforest_train(fit_train, seed=args.seed)
        score_fn = lambda x: 1.0 - anomaly.iforest_score(forest, x)
        threshold = 0.5
    else:
        gmm = anomaly.fit_gmm_calibrated(fit_train, seed=args.seed)
        score_fn = gmm.inlier_score
        threshold = 0.5
    result = anomaly.detect(score_fn, eval_feats, threshold)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("score,predicted,truth\n")
        for s, p, t in zip(result.scores, result.labels, eval_truth):
            fh.write(f"{float(s)!r},{int(p)},{int(t)}\n")
    cm = evaluation.confusion(eval_truth, result.labels, positive_class=1)
    print(json.dumps(evaluation.metrics(cm)))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    lines = Path(args.input).read_text().strip().splitlines()[1:]
    scores, predicted, truth = [], [], []
    for line in lines:
        s, p, t = line.split(",")
        scores.append(float(s))
        predicted.append(int(p))
        truth.append(int(t))
    scores = np.asarray(scores)
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    cm = evaluation.confusion(truth, predicted, positive_class=1)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"confusion": cm.to_dict(), "metrics": evaluation.metrics(cm)}
    if len(np.unique(truth)) == 2:
        fpr, tpr, thr, auc = evaluation.roc_curve(scores, truth, 1)
        evaluation.write_curve_csv(out / "roc.csv", thr, fpr, tpr)
        rec, prec, pthr = evaluation.pr_curve(scores, truth, 1)
        evaluation.write_curve_csv(out / "pr.csv", pthr, rec, prec)
        payload["auc"] = auc
    (out / "metrics.json").write_text(json.dumps(payload, sort_keys=True, indent=1))
    print(json.dumps(payload["metrics"]))
    return EXIT_OK


def _cmd_report(args) -> int:
    report_path = Path(args.run_dir) / "report.json"
    if not report_path.exists():
        print("no report.json in run directory", file=sys.stderr)
        return EXIT_CELL_FAILURES
    report = json.loads(report_path.read_text())
    table = {}
    for key, cell in report.get("cells", {}).items():
        method, data_type, pairing = key.split("|")
        m = cell.get("validation", cell).get("metrics")
        if m is not None:
            table.setdefault(method, {}).setdefault(data_type, {})[pairing] = m
    print(json.dumps(table, sort_keys=True, indent=1))
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    code, report = run_pipeline(cfg, args.out)
    print(
        f"run complete: {len(report['cells'])} cells, "
        f"{len(report['failures'])} failures, digest {report['determinism_digest'][:12]}"
    )
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camosig",
        description="Camouflage sensor signals as images/audio and compare "
        "gesture detection before and after encoding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic recording CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="fuse and clean a recording into instances")
    p.add_argument("--input", required=True)
    p.add_argument("--pairing", required=True, choices=[x.tag for x in Pairing])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("encode", help="encode instances as image/audio artifacts")
    p.add_argument("--input", required=True, help="descriptor CSV (label last)")
    p.add_argument("--type", required=True, choices=["image", "audio"])
    p.add_argument("--pairing", default=None, choices=[x.tag for x in Pairing],
                   help="validate the input dimension against a pairing")
    p.add_argument("--outdir", required=True)
    p.add_argument("--bit-depth", type=int, default=8, dest="bit_depth")
    p.add_argument("--sample-rate", type=int, default=encode.DEFAULT_SAMPLE_RATE, dest="sample_rate")
    p.add_argument("--dwell-ms", type=float, default=encode.DEFAULT_DWELL_MS, dest="dwell_ms")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("features", help="extract descriptors from artifacts")
    p.add_argument("--input", required=True, help="artifact directory with index.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--gist-resize", type=int, default=0, dest="gist_resize")
    p.add_argument("--grid", type=int, default=0)
    p.add_argument("--pca", type=int, default=0)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="nested-CV kernel comparison on descriptors")
    p.add_argument("--input", required=True)
    p.add_argument("--kernels", default="all")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--inner-folds", type=int, default=3, dest="inner_folds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="one-class novelty detection on descriptors")
    p.add_argument("--input", required=True)
    p.add_argument("--detector", required=True, choices=["ocsvm", "iforest", "gmm"])
    p.add_argument("--train-class", type=int, default=ingest.GESTURE, dest="train_class")
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="metrics and curves from a score CSV")
    p.add_argument("--input", required=True, help="CSV with score,predicted,truth")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--run-dir", required=True, dest="run_dir")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="full experiment matrix from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ingest.IngestError, encode.EncodingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CELL_FAILURES


if __name__ == "__main__":
    sys.exit(main())
