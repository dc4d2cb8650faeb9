"""Two-stage training protocol, leave-one-domain-out evaluation, metrics,
alignment-strategy ablations, and sensitivity sweeps.

Stage I trains a throwaway auxiliary encoder by plain ERM, freezes it,
extracts Welch descriptors of all source samples, stratifies them (K-Means,
a single global stratum, or one stratum per source domain, depending on the
strategy), and builds the fixed anchor set. Stage II trains the final
encoder-classifier from scratch with deterministic calibration between
encoder and pooling; anchors never receive gradients and are byte-identical
before and after training.

Held-out domain data is only ever read through ``DomainData.samples()``,
and only after both training stages of its fold have completed, which makes
the no-target-leakage guarantee directly testable with counting doubles.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorSet, build_anchor_set, save_anchors
from .calibrate import CalibrationConfig
from .errors import EmptyMatrix, InvalidInput, RankOutOfRange
from .model import (
    AdamState,
    ClassifierParams,
    EncoderParams,
    adam_step,
    backward,
    forward_loss,
    identity_encoder,
    init_classifier,
    init_conv_encoder,
    sgd_step,
)
from .spectral import PowerSpectrum, SpectralConfig, _welch
from .stratify import StrataModel, kmeans_fit

STRATEGIES = (
    "baseline_no_calibration",
    "global_anchor",
    "dataset_anchor",
    "structural",
)


def derive_seed(master: int, *labels) -> int:
    """Deterministic child seed from a master seed and a label path."""
    payload = json.dumps([int(master), *[str(l) for l in labels]])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class StrategyConfig:
    """Everything one experiment needs: alignment strategy, stratification
    granularity, calibration and spectral settings, and training knobs."""

    strategy: str = "structural"
    k: int = 2
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    warmup_epochs: int = 2
    train_epochs: int = 12
    lr: float = 0.01
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    encoder_variant: str = "conv1d"
    encoder_channels: int = 8
    kernel_width: int = 17
    stride: int = 1
    series_len: int = 256
    in_channels: int = 2
    n_classes: int = 3

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidInput(f"strategy must be one of {STRATEGIES}")
        if self.k < 1:
            raise InvalidInput("k must be >= 1")
        if self.warmup_epochs < 1 or self.train_epochs < 1:
            raise InvalidInput("epoch counts must be >= 1")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInput("optimizer must be 'sgd' or 'adam'")
        if self.encoder_variant not in ("identity", "conv1d"):
            raise InvalidInput("encoder_variant must be 'identity' or 'conv1d'")
        if self.feature_len < self.spectral.frame_len:
            raise InvalidInput(
                f"encoder output length {self.feature_len} shorter than "
                f"frame_len {self.spectral.frame_len}"
            )

    @property
    def feature_len(self) -> int:
        if self.encoder_variant == "identity":
            return self.series_len
        return (self.series_len - self.kernel_width) // self.stride + 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


@dataclass(frozen=True)
class ExperimentResult:
    """Per-target-domain outcome of one LODO fold."""

    target_domain: int
    n_samples: int
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    strata_histogram: np.ndarray
    runtime_s: float
    config: dict


@dataclass(frozen=True)
class TrainedModel:
    encoder: EncoderParams
    classifier: ClassifierParams
    loss_history: tuple


# Metrics.


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    out = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(out, (y_true, y_pred), 1)
    return out


def accuracy(confusion: np.ndarray) -> float:
    _check_confusion(confusion)
    return float(np.trace(confusion) / confusion.sum())


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean over classes of 2PR/(P+R); a class with no true and
    no predicted samples contributes 0."""
    _check_confusion(confusion)
    confusion = np.asarray(confusion, dtype=float)
    tp = np.diag(confusion)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    return float(f1.mean())


def _check_confusion(confusion: np.ndarray) -> None:
    confusion = np.asarray(confusion)
    if confusion.size == 0 or confusion.sum() == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise InvalidInput(f"confusion matrix must be square, got {confusion.shape}")
    if np.any(confusion < 0):
        raise InvalidInput("confusion matrix counts must be >= 0")


# Training internals.


def _gather(domains):
    xs, ys, domain_idx = [], [], []
    for i, d in enumerate(domains):
        x, y = d.samples()
        xs.append(np.asarray(x, dtype=float))
        ys.append(np.asarray(y, dtype=int))
        domain_idx.append(np.full(len(y), i, dtype=int))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(domain_idx)


def _init_model(cfg: StrategyConfig, seed: int):
    rng = np.random.default_rng(seed)
    if cfg.encoder_variant == "identity":
        enc = identity_encoder()
        n_channels = cfg.in_channels
    else:
        enc = init_conv_encoder(
            rng, cfg.in_channels, cfg.encoder_channels, cfg.kernel_width, cfg.stride
        )
        n_channels = cfg.encoder_channels
    clf = init_classifier(cfg.n_classes, n_channels)
    return enc, clf


def _train(x, y, cfg: StrategyConfig, anchors, epochs: int, seed_label: str):
    """Mini-batch training loop; anchors=None trains without calibration.

    Training always calibrates with the nearest anchor (rank 1); ranks
    other than 1 are evaluation-time perturbations.
    """
    enc, clf = _init_model(cfg, derive_seed(cfg.seed, seed_label, "init"))
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, seed_label, "batches"))
    cal_cfg = dataclasses.replace(cfg.calibration, rank=1)
    enc_state = AdamState.for_params(enc) if cfg.optimizer == "adam" else None
    clf_state = AdamState.for_params(clf) if cfg.optimizer == "adam" else None

    n = x.shape[0]
    losses = []
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            result = forward_loss(
                enc,
                clf,
                x[idx],
                y[idx],
                anchors=anchors,
                spectral_cfg=cfg.spectral,
                cal_cfg=cal_cfg,
            )
            losses.append(result.loss)
            enc_grads, clf_grads = backward(enc, clf, result.cache)
            if cfg.optimizer == "adam":
                enc, enc_state = adam_step(enc, enc_grads, enc_state, cfg.lr)
                clf, clf_state = adam_step(clf, clf_grads, clf_state, cfg.lr)
            else:
                enc = sgd_step(enc, enc_grads, cfg.lr)
                clf = sgd_step(clf, clf_grads, cfg.lr)
    return TrainedModel(encoder=enc, classifier=clf, loss_history=tuple(losses))


def _source_spectra(enc: EncoderParams, x: np.ndarray, cfg: StrategyConfig):
    from .model import _encode_batch

    features, _, _ = _encode_batch(enc, x)
    psd = _welch(features, cfg.spectral)
    fingerprint = cfg.spectral.fingerprint()
    return [PowerSpectrum(data=p, fingerprint=fingerprint) for p in psd]


def run_stage1(source_domains, cfg: StrategyConfig) -> AnchorSet:
    """Structure estimation: warm up an auxiliary model, freeze it, extract
    descriptors, stratify per strategy, build the fixed anchors. The
    auxiliary model is discarded afterwards."""
    if not source_domains:
        raise InvalidInput("need at least one source domain")
    x, _y, domain_idx = _gather(source_domains)
    aux = _train(x, _y, cfg, anchors=None, epochs=cfg.warmup_epochs, seed_label="stage1")
    spectra = _source_spectra(aux.encoder, x, cfg)

    if cfg.strategy == "dataset_anchor":
        n_domains = int(domain_idx.max()) + 1
        points = np.stack([p.data.ravel() for p in spectra])
        centers = np.stack(
            [points[domain_idx == d].mean(axis=0) for d in range(n_domains)]
        )
        diff = points - centers[domain_idx]
        model = StrataModel(
            k=n_domains,
            centers=centers,
            assignments=domain_idx,
            inertia=float(np.einsum("nd,nd->", diff, diff)),
            seed=cfg.seed,
        )
    else:
        k = 1 if cfg.strategy == "global_anchor" else cfg.k
        model = kmeans_fit(
            spectra, k=k, seed=derive_seed(cfg.seed, "stage1", "kmeans")
        )
    return build_anchor_set(spectra, model, cfg.spectral, eps=cfg.calibration.eps)


def run_stage2(source_domains, anchors: AnchorSet | None, cfg: StrategyConfig) -> TrainedModel:
    """End-to-end training of the final model with fixed anchors; the
    baseline strategy skips the calibration stage entirely."""
    x, y, _ = _gather(source_domains)
    use_anchors = None if cfg.strategy == "baseline_no_calibration" else anchors
    return _train(x, y, cfg, anchors=use_anchors, epochs=cfg.train_epochs, seed_label="stage2")


def evaluate_model(
    trained: TrainedModel,
    anchors: AnchorSet | None,
    target_domain,
    cfg: StrategyConfig,
    rank: int | None = None,
    runtime_s: float = 0.0,
) -> ExperimentResult:
    """Zero-shot evaluation on one held-out domain."""
    x, y = target_domain.samples()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    use_anchors = None if cfg.strategy == "baseline_no_calibration" else anchors
    cal_cfg = cfg.calibration
    if rank is not None:
        cal_cfg = dataclasses.replace(cal_cfg, rank=rank)
    result = forward_loss(
        trained.encoder,
        trained.classifier,
        x,
        y,
        anchors=use_anchors,
        spectral_cfg=cfg.spectral,
        cal_cfg=cal_cfg,
    )
    predictions = np.argmax(result.logits, axis=1)
    confusion = confusion_matrix(y, predictions, cfg.n_classes)
    k = anchors.k if use_anchors is not None else 0
    histogram = np.zeros(k, dtype=int)
    if result.cache.strata is not None:
        np.add.at(histogram, result.cache.strata, 1)
    return ExperimentResult(
        target_domain=int(target_domain.domain_id),
        n_samples=int(y.shape[0]),
        accuracy=accuracy(confusion),
        macro_f1=macro_f1(confusion),
        confusion=confusion,
        strata_histogram=histogram,
        runtime_s=runtime_s,
        config=cfg.to_dict(),
    )


def _run_fold(domains, fold_idx: int, cfg: StrategyConfig, rank, phase_hook):
    start = time.perf_counter()
    fold_cfg = dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "fold", fold_idx))
    sources = [d for i, d in enumerate(domains) if i != fold_idx]
    if phase_hook is not None:
        phase_hook(fold_idx, "train")
    anchors = None
    if cfg.strategy != "baseline_no_calibration":
        anchors = run_stage1(sources, fold_cfg)
    trained = run_stage2(sources, anchors, fold_cfg)
    if phase_hook is not None:
        phase_hook(fold_idx, "evaluate")
    elapsed = time.perf_counter() - start
    return trained, anchors, evaluate_model(
        trained, anchors, domains[fold_idx], fold_cfg, rank=rank, runtime_s=elapsed
    )


def run_lodo(
    domains,
    cfg: StrategyConfig,
    rank: int | None = None,
    threads: int = 1,
    phase_hook=None,
):
    """Leave-one-domain-out: train on all domains but one, evaluate on the
    held-out domain, for every domain in turn. Folds are independent and may
    run on a thread pool; results are merged in domain order."""
    domains = list(domains)
    if len(domains) < 2:
        raise InvalidInput("leave-one-domain-out needs at least 2 domains")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_fold, domains, i, cfg, rank, phase_hook)
                for i in range(len(domains))
            ]
            folds = [f.result() for f in futures]
    else:
        folds = [_run_fold(domains, i, cfg, rank, phase_hook) for i in range(len(domains))]
    return [result for _, _, result in folds]


def aggregate(results) -> dict:
    """Unweighted mean over target domains."""
    return {
        "accuracy": float(np.mean([r.accuracy for r in results])),
        "macro_f1": float(np.mean([r.macro_f1 for r in results])),
    }


def sweep_k(domains, cfg: StrategyConfig, k_values, threads: int = 1):
    """LODO per stratification granularity; rows of (K, avg ACC, avg MF1)."""
    k_values = list(k_values)
    if not k_values:
        raise InvalidInput("k_values must be nonempty")
    rows = []
    for k in k_values:
        results = run_lodo(domains, dataclasses.replace(cfg, k=int(k)), threads=threads)
        avg = aggregate(results)
        rows.append({"k": int(k), "accuracy": avg["accuracy"], "macro_f1": avg["macro_f1"]})
    return rows


def sweep_rank(domains, cfg: StrategyConfig, r_values, threads: int = 1):
    """Evaluation-time matching-rank sweep; training always uses rank 1.

    Each fold is trained once and evaluated with every requested rank; rows
    of (R, avg ACC, avg MF1)."""
    r_values = [int(r) for r in r_values]
    if not r_values:
        raise InvalidInput("r_values must be nonempty")
    for r in r_values:
        if r < 1 or r > cfg.k:
            raise RankOutOfRange(f"rank {r} outside [1, {cfg.k}]")

    domains = list(domains)
    if len(domains) < 2:
        raise InvalidInput("leave-one-domain-out needs at least 2 domains")

    def fold(i):
        return _run_fold(domains, i, cfg, None, None)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            folds = list(pool.map(fold, range(len(domains))))
    else:
        folds = [fold(i) for i in range(len(domains))]

    rows = []
    for r in r_values:
        per_fold = []
        for i, (trained, anchors, _) in enumerate(folds):
            fold_cfg = dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "fold", i))
            per_fold.append(
                evaluate_model(trained, anchors, domains[i], fold_cfg, rank=r)
            )
        avg = aggregate(per_fold)
        rows.append({"r": r, "accuracy": avg["accuracy"], "macro_f1": avg["macro_f1"]})
    return rows


# Artifact emission.


def results_to_csv(results) -> str:
    lines = ["target_domain,n_samples,accuracy,macro_f1"]
    for r in results:
        lines.append(f"{r.target_domain},{r.n_samples},{r.accuracy:.6f},{r.macro_f1:.6f}")
    avg = aggregate(results)
    lines.append(f"AVG,,{avg['accuracy']:.6f},{avg['macro_f1']:.6f}")
    return "\n".join(lines) + "\n"


def sweep_to_csv(rows, key: str) -> str:
    lines = [f"{key},avg_accuracy,avg_macro_f1"]
    for row in rows:
        lines.append(f"{row[key]},{row['accuracy']:.6f},{row['macro_f1']:.6f}")
    return "\n".join(lines) + "\n"


def run_manifest(cfg: StrategyConfig, extra: dict | None = None) -> dict:
    """Reproducibility record: full config plus a content hash."""
    payload = {"config": cfg.to_dict(), **(extra or {})}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
    payload["content_hash"] = digest
    return payload
