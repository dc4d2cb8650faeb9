"""Minimal differentiable encoder + softmax classifier with explicit gradients.

The encoder is either an identity map or a single valid-mode 1-D
convolution with ReLU; the classifier is global mean pooling followed by a
linear layer and softmax cross-entropy. Calibration sits between encoder
and pooling. Backpropagation treats the calibration mask as a constant:
gradients flow through the bin-wise frequency scaling (its own adjoint) but
never into the mask or the anchors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .calibrate import CalibrationConfig, _apply_mask_core, batch_calibrate
from .container import read_container, write_container
from .errors import InvalidInput, LabelOutOfRange, ShapeMismatch, StateError
from .spectral import SpectralConfig

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderParams:
    variant: str = "identity"
    kernels: np.ndarray | None = None  # (C_out, C_in, k)
    bias: np.ndarray | None = None  # (C_out,)
    stride: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.variant not in ("identity", "conv1d"):
            raise InvalidInput(f"unknown encoder variant {self.variant!r}")
        if self.variant == "conv1d":
            if self.kernels is None or self.bias is None:
                raise InvalidInput("conv1d encoder needs kernels and bias")
            if self.kernels.ndim != 3 or self.bias.shape != (self.kernels.shape[0],):
                raise ShapeMismatch("kernels must be (C_out, C_in, k) with matching bias")
            if self.stride < 1:
                raise InvalidInput("stride must be >= 1")


POOLINGS = ("global_mean", "global_mean_abs")


@dataclass(frozen=True)
class ClassifierParams:
    """Pooling + linear head.

    ``global_mean`` averages the feature map over time; because the time
    average of a signal equals its DC bin, bin-wise spectral calibration is
    invisible to it. ``global_mean_abs`` averages absolute values, which
    reads the oscillatory amplitude the calibration actually adjusts, and is
    the harness default.
    """

    weights: np.ndarray  # (C_y, C)
    bias: np.ndarray  # (C_y,)
    pooling: str = "global_mean_abs"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch("weights must be (C_y, C) with matching bias")
        if self.weights.shape[0] < 2:
            raise InvalidInput("need at least 2 classes")
        if self.pooling not in POOLINGS:
            raise InvalidInput(f"pooling must be one of {POOLINGS}")


def identity_encoder() -> EncoderParams:
    return EncoderParams(variant="identity")


def init_conv_encoder(rng, c_in: int, c_out: int, kernel: int, stride: int = 1) -> EncoderParams:
    scale = 1.0 / np.sqrt(c_in * kernel)
    return EncoderParams(
        variant="conv1d",
        kernels=rng.normal(0.0, scale, size=(c_out, c_in, kernel)),
        bias=np.zeros(c_out),
        stride=stride,
    )


def init_classifier(
    n_classes: int, n_channels: int, pooling: str = "global_mean_abs"
) -> ClassifierParams:
    # zero init keeps the step-0 loss at ln(n_classes)
    return ClassifierParams(
        weights=np.zeros((n_classes, n_channels)),
        bias=np.zeros(n_classes),
        pooling=pooling,
    )


def _conv_windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    if x.shape[-1] < kernel:
        raise ShapeMismatch(f"series length {x.shape[-1]} shorter than kernel {kernel}")
    return np.lib.stride_tricks.sliding_window_view(x, kernel, axis=-1)[..., ::stride, :]


def _encode_batch(params: EncoderParams, x: np.ndarray):
    """Returns (features, pre_activation, windows); the latter two are None
    for the identity variant."""
    if params.variant == "identity":
        return x, None, None
    if x.shape[-2] != params.kernels.shape[1]:
        raise ShapeMismatch(
            f"{x.shape[-2]} input channels, encoder expects {params.kernels.shape[1]}"
        )
    windows = _conv_windows(x, params.kernels.shape[2], params.stride)
    z = np.einsum("bilk,oik->bol", windows, params.kernels) + params.bias[:, None]
    return np.maximum(z, 0.0), z, windows


def encode(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Feature map for one raw series ``(C_in, T)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeMismatch(f"raw series must be 2-D, got {x.shape}")
    h, _, _ = _encode_batch(params, x[None])
    return h[0]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BatchCache:
    """Intermediates retained by forward_loss for the backward pass."""

    x: np.ndarray
    z: np.ndarray | None
    windows: np.ndarray | None
    features: np.ndarray
    calibrated: bool
    masks: np.ndarray | None
    pooled: np.ndarray
    probs: np.ndarray
    labels: np.ndarray
    strata: np.ndarray | None
    distances: np.ndarray | None


@dataclass(frozen=True)
class ForwardResult:
    loss: float
    logits: np.ndarray
    cache: BatchCache


def forward_loss(
    enc: EncoderParams,
    clf: ClassifierParams,
    x: np.ndarray,
    y: np.ndarray,
    anchors: AnchorSet | None = None,
    spectral_cfg: SpectralConfig | None = None,
    cal_cfg: CalibrationConfig | None = None,
    frozen_masks: np.ndarray | None = None,
) -> ForwardResult:
    """Mean softmax cross-entropy over a batch ``(B, C_in, T)``.

    With ``anchors`` set, features are calibrated before pooling (rank taken
    from ``cal_cfg``). ``frozen_masks`` replays previously computed masks,
    which keeps the map differentiable end to end for gradient checks.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    n_classes = clf.bias.shape[0]
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")

    h, z, windows = _encode_batch(enc, x)
    strata = distances = None
    if frozen_masks is not None:
        calibrated = True
        masks = frozen_masks
        hc = _apply_mask_core(h, masks)
    elif anchors is not None:
        if cal_cfg is None or spectral_cfg is None:
            raise InvalidInput("calibrated forward needs spectral_cfg and cal_cfg")
        hc, masks, strata, distances = batch_calibrate(h, anchors, spectral_cfg, cal_cfg)
        calibrated = not cal_cfg.unit_mask
        if cal_cfg.unit_mask:
            masks = None
    else:
        calibrated = False
        masks = None
        hc = h

    if clf.pooling == "global_mean_abs":
        pooled = np.abs(hc).mean(axis=-1)
    else:
        pooled = hc.mean(axis=-1)
    logits = pooled @ clf.weights.T + clf.bias
    probs = _softmax(logits)
    losses = -np.log(probs[np.arange(y.shape[0]), y] + 1e-300)
    cache = BatchCache(
        x=x,
        z=z,
        windows=windows,
        features=h,
        calibrated=calibrated,
        masks=masks,
        pooled=pooled,
        probs=probs,
        labels=y,
        strata=strata,
        distances=distances,
    )
    return ForwardResult(loss=float(losses.mean()), logits=logits, cache=cache)


@dataclass(frozen=True)
class EncoderGrads:
    kernels: np.ndarray | None = None
    bias: np.ndarray | None = None


@dataclass(frozen=True)
class ClassifierGrads:
    weights: np.ndarray
    bias: np.ndarray


def backward(
    enc: EncoderParams,
    clf: ClassifierParams,
    cache: BatchCache | None,
    with_input_grad: bool = False,
):
    """Exact gradients of the cached forward pass under the frozen-mask
    contract. Returns ``(encoder_grads, classifier_grads)`` or, with
    ``with_input_grad``, ``(encoder_grads, classifier_grads, input_grad)``.
    """
    if cache is None:
        raise StateError("backward called without a cached forward pass")
    batch = cache.probs.shape[0]
    onehot = np.zeros_like(cache.probs)
    onehot[np.arange(batch), cache.labels] = 1.0
    dlogits = (cache.probs - onehot) / batch

    clf_grads = ClassifierGrads(weights=dlogits.T @ cache.pooled, bias=dlogits.sum(axis=0))

    length = cache.features.shape[-1]
    dhc = (dlogits @ clf.weights)[:, :, None] / length
    dhc = np.broadcast_to(dhc, cache.features.shape)
    if cache.calibrated:
        # the bin-wise real scaling is its own adjoint
        dh = _apply_mask_core(dhc, cache.masks)
    else:
        dh = dhc

    if enc.variant == "identity":
        enc_grads = EncoderGrads()
        dx = dh if with_input_grad else None
    else:
        dz = dh * (cache.z > 0)
        enc_grads = EncoderGrads(
            kernels=np.einsum("bol,bilk->oik", dz, cache.windows),
            bias=dz.sum(axis=(0, 2)),
        )
        dx = None
        if with_input_grad:
            dx = np.zeros_like(cache.x)
            kernel = enc.kernels.shape[2]
            out_len = dz.shape[-1]
            for j in range(kernel):
                span = dx[:, :, j : j + enc.stride * out_len : enc.stride]
                span += np.einsum("bol,oi->bil", dz, enc.kernels[:, :, j])

    if with_input_grad:
        return enc_grads, clf_grads, dx
    return enc_grads, clf_grads


def _grad_arrays(obj) -> dict:
    return {
        f.name: getattr(obj, f.name)
        for f in dataclasses.fields(obj)
        if isinstance(getattr(obj, f.name), np.ndarray)
    }


def sgd_step(params, grads, lr: float):
    """Plain gradient descent: each array field moves by ``-lr * grad``."""
    updates = {}
    for name, garr in _grad_arrays(grads).items():
        arr = getattr(params, name)
        if arr is None or arr.shape != garr.shape:
            raise ShapeMismatch(f"gradient shape mismatch on field {name!r}")
        updates[name] = arr - lr * garr
    return dataclasses.replace(params, **updates)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        arrays = _grad_arrays(params)
        return cls(
            m={k: np.zeros_like(v) for k, v in arrays.items()},
            v={k: np.zeros_like(v) for k, v in arrays.items()},
        )


def adam_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
):
    """One Adam update; returns ``(new_params, new_state)``."""
    b1, b2 = betas
    t = state.t + 1
    new_m, new_v, updates = {}, {}, {}
    for name, garr in _grad_arrays(grads).items():
        arr = getattr(params, name)
        if arr is None or arr.shape != garr.shape:
            raise ShapeMismatch(f"gradient shape mismatch on field {name!r}")
        m = b1 * state.m[name] + (1 - b1) * garr
        v = b2 * state.v[name] + (1 - b2) * garr**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        updates[name] = arr - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return dataclasses.replace(params, **updates), AdamState(m=new_m, v=new_v, t=t)


def save_checkpoint(enc: EncoderParams, clf: ClassifierParams, path) -> None:
    meta = {
        "encoder": {
            "variant": enc.variant,
            "stride": enc.stride,
            "activation": enc.activation,
        },
        "classifier": {"pooling": clf.pooling},
    }
    arrays = {"clf_weights": clf.weights, "clf_bias": clf.bias}
    if enc.variant == "conv1d":
        arrays["enc_kernels"] = enc.kernels
        arrays["enc_bias"] = enc.bias
    write_container(path, "checkpoint", CHECKPOINT_FORMAT_VERSION, meta, arrays)


def load_checkpoint(path):
    meta, arrays = read_container(path, "checkpoint", CHECKPOINT_FORMAT_VERSION)
    enc_meta = meta["encoder"]
    if enc_meta["variant"] == "conv1d":
        enc = EncoderParams(
            variant="conv1d",
            kernels=arrays["enc_kernels"],
            bias=arrays["enc_bias"],
            stride=int(enc_meta["stride"]),
            activation=enc_meta["activation"],
        )
    else:
        enc = identity_encoder()
    clf = ClassifierParams(
        weights=arrays["clf_weights"],
        bias=arrays["clf_bias"],
        pooling=meta["classifier"]["pooling"],
    )
    return enc, clf
