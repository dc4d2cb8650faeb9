"""Structural matching and phase-preserving amplitude calibration.

A sample's Welch descriptor is matched to its nearest reference anchor in
the joint channel-frequency space; a per-bin amplitude scaling mask is
computed from the matched anchor, linearly resampled to full-length FFT
bins, and applied multiplicatively to the sample's one-sided spectrum. The
mask is real and nonnegative, so phase is untouched by construction.

Two textual variants exist for both the matching space and the scaling
target (power vs amplitude); both are selectable through
:class:`CalibrationConfig`. Defaults follow the operational pseudocode
reading: match against the power anchors, scale toward the power anchors.

The mask is a constant with respect to differentiation (stop-gradient
contract): gradients flow only through the linear frequency-scaling path,
whose adjoint is the scaling itself (real diagonal operator in frequency
domain under the unnormalized-forward/normalized-inverse transform pair).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .errors import ConfigMismatch, InvalidInput, RankOutOfRange, ShapeMismatch
from .spectral import (
    PowerSpectrum,
    SpectralConfig,
    _interp_bins,
    _welch,
    check_feature_map,
    welch_psd,
)

MATCH_SPACES = ("power", "amplitude")
TARGET_SPACES = ("power", "amplitude")


@dataclass(frozen=True)
class CalibrationConfig:
    """Matching/scaling variant selection.

    ``match_space``: compare descriptors against the power anchors or the
    amplitude templates. ``target_space``: scale sample power toward the
    power anchor or toward the amplitude template. ``rank`` selects the
    R-th nearest anchor (1 = nearest). ``max_gain`` optionally clamps the
    mask (off by default; an off-book escape hatch for degenerate bins).
    ``unit_mask`` short-circuits calibration into an exact pass-through,
    for pipeline-equivalence checks.
    """

    match_space: str = "power"
    target_space: str = "power"
    eps: float = 1e-8
    rank: int = 1
    max_gain: float | None = None
    unit_mask: bool = False

    def __post_init__(self):
        if self.match_space not in MATCH_SPACES:
            raise InvalidInput(f"match_space must be one of {MATCH_SPACES}")
        if self.target_space not in TARGET_SPACES:
            raise InvalidInput(f"target_space must be one of {TARGET_SPACES}")
        if not (self.eps > 0):
            raise InvalidInput("eps must be > 0")
        if self.rank < 1:
            raise InvalidInput("rank must be >= 1")
        if self.max_gain is not None and not (self.max_gain > 0):
            raise InvalidInput("max_gain must be > 0 when set")


@dataclass(frozen=True)
class CalibratedFeatureMap:
    """Calibration output: same-shape features plus match bookkeeping.

    ``mask`` is the full-length interpolated mask actually applied; callers
    retain it to drive :func:`calibrate_adjoint`.
    """

    data: np.ndarray
    matched_stratum: int
    match_distance: float
    mask: np.ndarray


def _match_references(anchors: AnchorSet, space: str) -> np.ndarray:
    if space == "power":
        return anchors.power_anchors
    return anchors.amplitude_templates  # == sqrt(power_anchors)


def _check_compat(p: PowerSpectrum, anchors: AnchorSet) -> None:
    if p.fingerprint != anchors.fingerprint():
        raise ConfigMismatch(
            "spectrum fingerprint does not match the anchor set's spectral config"
        )
    if p.data.shape != anchors.power_anchors.shape[1:]:
        raise ShapeMismatch(
            f"spectrum shape {p.data.shape} vs anchor shape "
            f"{anchors.power_anchors.shape[1:]}"
        )


def _distances(p_data: np.ndarray, refs: np.ndarray) -> np.ndarray:
    diff = refs.reshape(refs.shape[0], -1) - p_data.ravel()
    return np.sqrt(np.einsum("kd,kd->k", diff, diff))


def match_stratum(p: PowerSpectrum, anchors: AnchorSet, cfg: CalibrationConfig):
    """Nearest anchor in the configured space: ``(stratum index, distance)``."""
    _check_compat(p, anchors)
    d = _distances(p.data, _match_references(anchors, cfg.match_space))
    best = int(np.argmin(d))  # lowest index wins ties
    return best, float(d[best])


def match_stratum_rank(p: PowerSpectrum, anchors: AnchorSet, cfg: CalibrationConfig, rank: int):
    """R-th nearest anchor (rank 1 is the nearest): ``(stratum index, distance)``."""
    if rank < 1 or rank > anchors.k:
        raise RankOutOfRange(f"rank must be in [1, {anchors.k}], got {rank}")
    _check_compat(p, anchors)
    d = _distances(p.data, _match_references(anchors, cfg.match_space))
    order = np.argsort(d, kind="stable")
    idx = int(order[rank - 1])
    return idx, float(d[idx])


def _mask_target(anchor_amplitude, anchor_power, target_space):
    return anchor_power if target_space == "power" else anchor_amplitude


def scaling_mask(
    p_src: PowerSpectrum,
    anchor_amplitude: np.ndarray,
    anchor_power: np.ndarray,
    cfg: CalibrationConfig,
) -> np.ndarray:
    """Per-bin amplitude scaling toward the matched anchor.

    Power target: ``sqrt(P_bar / (P_src + eps))``; amplitude target:
    ``sqrt(A / (P_src + eps))``. Always finite and nonnegative; eps keeps
    zero-power bins from dividing by zero (they produce large finite gains
    unless ``max_gain`` clamps them).
    """
    if anchor_amplitude.shape != p_src.data.shape or anchor_power.shape != p_src.data.shape:
        raise ShapeMismatch("anchor and source spectrum shapes differ")
    target = _mask_target(anchor_amplitude, anchor_power, cfg.target_space)
    mask = np.sqrt(target / (p_src.data + cfg.eps))
    if cfg.max_gain is not None:
        mask = np.minimum(mask, cfg.max_gain)
    return mask


def apply_mask(h: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scale a feature map's one-sided spectrum bin-wise by a real mask.

    The linear core of calibration: ``irfft(rfft(h) * mask)``. ``mask`` must
    already be at full-length FFT resolution, ``(C, L//2 + 1)``.
    """
    h = check_feature_map(h)
    if mask.shape != (h.shape[0], h.shape[1] // 2 + 1):
        raise ShapeMismatch(
            f"mask shape {mask.shape} does not fit feature map {h.shape}"
        )
    return _apply_mask_core(h, mask)


def _apply_mask_core(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.fft.irfft(np.fft.rfft(x, axis=-1) * mask, n=x.shape[-1], axis=-1)


def calibrate(
    h: np.ndarray,
    anchors: AnchorSet,
    spectral_cfg: SpectralConfig,
    cal_cfg: CalibrationConfig,
) -> CalibratedFeatureMap:
    """Match a feature map to its anchor and scale its spectrum toward it.

    The descriptor branch (mean removal + Welch PSD) drives rank-R anchor
    matching and the scaling mask; the mask is then linearly resampled to
    full-length FFT bins and multiplied onto the spectrum of the original
    input. The input is never mutated; its phase is preserved at every bin
    because the mask is real and strictly positive.
    """
    h = check_feature_map(h)
    if spectral_cfg.fingerprint() != anchors.fingerprint():
        raise ConfigMismatch("spectral config does not match the anchor set")
    p = welch_psd(h, spectral_cfg)
    if cal_cfg.rank > anchors.k:
        raise RankOutOfRange(f"rank {cal_cfg.rank} exceeds anchor count {anchors.k}")
    stratum, distance = match_stratum_rank(p, anchors, cal_cfg, cal_cfg.rank)
    if cal_cfg.unit_mask:
        return CalibratedFeatureMap(
            data=h.copy(),
            matched_stratum=stratum,
            match_distance=distance,
            mask=np.ones((h.shape[0], h.shape[1] // 2 + 1)),
        )
    mask = scaling_mask(
        p, anchors.amplitude_templates[stratum], anchors.power_anchors[stratum], cal_cfg
    )
    full_mask = _interp_bins(mask, h.shape[1] // 2 + 1)
    out = _apply_mask_core(h, full_mask)
    return CalibratedFeatureMap(
        data=out,
        matched_stratum=stratum,
        match_distance=distance,
        mask=full_mask,
    )


def calibrate_adjoint(g: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Adjoint of the frozen-mask scaling map applied to a gradient.

    The map ``x -> irfft(rfft(x) * mask)`` with a real mask is self-adjoint,
    so the adjoint is the same scaling applied to ``g``.
    """
    return apply_mask(g, mask)


# Batched pipeline used by the model and harness; identical arithmetic to
# the per-sample ops, vectorized over a leading batch axis.


def batch_match(p_batch: np.ndarray, anchors: AnchorSet, cfg: CalibrationConfig, rank: int):
    """Per-sample rank-R match for a ``(B, C, F)`` descriptor stack."""
    if rank < 1 or rank > anchors.k:
        raise RankOutOfRange(f"rank must be in [1, {anchors.k}], got {rank}")
    refs = _match_references(anchors, cfg.match_space)
    # same diff-then-sum arithmetic as the per-sample path, so a sample
    # matched alone and in a batch lands on the same stratum bit-for-bit
    diff = refs.reshape(1, refs.shape[0], -1) - p_batch.reshape(p_batch.shape[0], 1, -1)
    d = np.sqrt(np.einsum("bkd,bkd->bk", diff, diff))
    order = np.argsort(d, axis=1, kind="stable")
    idx = order[:, rank - 1]
    return idx, d[np.arange(d.shape[0]), idx]


def batch_calibrate(
    x: np.ndarray,
    anchors: AnchorSet,
    spectral_cfg: SpectralConfig,
    cal_cfg: CalibrationConfig,
    rank: int | None = None,
):
    """Calibrate a ``(B, C, L)`` stack; returns ``(out, masks, strata, distances)``.

    ``masks`` are the full-length masks actually applied (all ones in
    unit-mask mode), retained by callers for the adjoint pass.
    """
    if rank is None:
        rank = cal_cfg.rank
    length = x.shape[-1]
    if spectral_cfg.frame_len > length:
        raise ConfigMismatch(
            f"frame_len {spectral_cfg.frame_len} exceeds series length {length}"
        )
    p = _welch(x, spectral_cfg)
    strata, distances = batch_match(p, anchors, cal_cfg, rank)
    if cal_cfg.unit_mask:
        masks = np.ones(x.shape[:-1] + (length // 2 + 1,))
        return x.copy(), masks, strata, distances
    target = _mask_target(
        anchors.amplitude_templates, anchors.power_anchors, cal_cfg.target_space
    )[strata]
    masks = np.sqrt(target / (p + cal_cfg.eps))
    if cal_cfg.max_gain is not None:
        masks = np.minimum(masks, cal_cfg.max_gain)
    full_masks = _interp_bins(masks, length // 2 + 1)
    out = _apply_mask_core(x, full_masks)
    return out, full_masks, strata, distances
