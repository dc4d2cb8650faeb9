"""Framing, windowing, Welch PSD, one-sided FFT, and frequency-bin interpolation.

All operations accept a channels-by-time feature map ``(C, L)`` and are pure
functions of their inputs. The batched private helpers take arbitrary
leading dimensions ``(..., C, L)`` and are the single arithmetic path, so a
sample processed alone and inside a batch produces bit-identical results.

Conventions: unnormalized forward DFT, one-sided spectra (real input), Welch
estimate is the plain average of magnitude-squared windowed frame FFTs with
no window-power or length normalization (ratios taken downstream cancel any
fixed scale). Mean removal happens once per channel, before framing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigMismatch, InvalidInput, ShapeMismatch

WINDOWS = ("hann", "rectangular")


def window_values(name: str, n: int) -> np.ndarray:
    """Window of length ``n`` by name."""
    if name == "hann":
        return np.hanning(n)
    if name == "rectangular":
        return np.ones(n)
    raise InvalidInput(f"unknown window {name!r} (choose from {WINDOWS})")


@dataclass(frozen=True)
class SpectralConfig:
    """Framing and windowing parameters for the Welch descriptor.

    ``frame_len`` samples per frame, ``hop`` samples between frame starts,
    ``eps`` is the stability constant added under square roots downstream.
    One-sided spectra only.
    """

    frame_len: int = 64
    hop: int = 32
    window: str = "hann"
    eps: float = 1e-8
    one_sided: bool = True

    def __post_init__(self):
        if self.frame_len < 1 or self.hop < 1:
            raise InvalidInput("frame_len and hop must be positive")
        if self.hop > self.frame_len:
            raise InvalidInput(f"hop {self.hop} exceeds frame_len {self.frame_len}")
        if not (self.eps > 0):
            raise InvalidInput("eps must be > 0")
        if self.window not in WINDOWS:
            raise InvalidInput(f"unknown window {self.window!r}")
        if not self.one_sided:
            raise InvalidInput("only one-sided spectra are supported")

    @property
    def n_bins(self) -> int:
        """Number of one-sided frequency bins per frame."""
        return self.frame_len // 2 + 1

    def fingerprint(self) -> str:
        """Stable short hash identifying this config across files and runs."""
        payload = json.dumps(
            {
                "frame_len": self.frame_len,
                "hop": self.hop,
                "window": self.window,
                "eps": self.eps,
                "one_sided": self.one_sided,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "frame_len": self.frame_len,
            "hop": self.hop,
            "window": self.window,
            "eps": self.eps,
            "one_sided": self.one_sided,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralConfig":
        return cls(
            frame_len=int(d["frame_len"]),
            hop=int(d["hop"]),
            window=str(d["window"]),
            eps=float(d["eps"]),
            one_sided=bool(d.get("one_sided", True)),
        )


@dataclass(frozen=True)
class PowerSpectrum:
    """Nonnegative ``(C, F)`` Welch descriptor plus the fingerprint of the
    config that produced it."""

    data: np.ndarray
    fingerprint: str

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ShapeMismatch(f"power spectrum must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise InvalidInput("power spectrum entries must be finite and >= 0")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class ComplexSpectrum:
    """One-sided complex spectrum ``(C, L//2+1)`` of a length-``L`` feature map."""

    data: np.ndarray
    original_len: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2:
            raise ShapeMismatch(f"complex spectrum must be 2-D, got shape {data.shape}")
        if data.shape[1] != self.original_len // 2 + 1:
            raise ShapeMismatch(
                f"{data.shape[1]} bins inconsistent with length {self.original_len}"
            )
        object.__setattr__(self, "data", data)


def check_feature_map(h: np.ndarray) -> np.ndarray:
    """Validate a ``(C, L)`` feature map: C >= 1, L >= 2, all finite."""
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise ShapeMismatch(f"feature map must be 2-D (C, L), got shape {h.shape}")
    c, length = h.shape
    if c < 1 or length < 2:
        raise ShapeMismatch(f"feature map needs C >= 1 and L >= 2, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise InvalidInput("feature map contains NaN or Inf")
    return h


# Batched cores: arbitrary leading dims, no validation.


def _remove_mean(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=-1, keepdims=True)


def _frame(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided frames ``(..., n_frames, frame_len)``; partial tails dropped."""
    length = x.shape[-1]
    n_frames = (length - frame_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)
    return view[..., ::hop, :][..., :n_frames, :]


def _welch(x: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Welch PSD over the last axis: mean removal, framing, window, |FFT|^2, frame average."""
    centered = _remove_mean(x)
    frames = _frame(centered, cfg.frame_len, cfg.hop)
    tapered = frames * window_values(cfg.window, cfg.frame_len)
    spectra = np.fft.rfft(tapered, axis=-1)
    return np.mean(np.abs(spectra) ** 2, axis=-2)


def _interp_weights(n_src: int, n_dst: int):
    """Index pairs and weights mapping normalized grid [0,1] with n_src nodes
    onto n_dst nodes, for piecewise-linear interpolation."""
    pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, n_src - 2)
    # clipped so the output is always a convex combination of two input bins
    frac = np.clip(pos - lo, 0.0, 1.0)
    return lo, frac


def _interp_bins(mask: np.ndarray, n_dst: int) -> np.ndarray:
    n_src = mask.shape[-1]
    if n_src == n_dst:
        return mask.copy()
    lo, frac = _interp_weights(n_src, n_dst)
    return mask[..., lo] * (1.0 - frac) + mask[..., lo + 1] * frac


# Public single-sample operations.


def remove_mean(h: np.ndarray) -> np.ndarray:
    """Subtract each channel's sample mean."""
    return _remove_mean(check_feature_map(h))


def welch_psd(h: np.ndarray, cfg: SpectralConfig) -> PowerSpectrum:
    """Welch power-spectral-density descriptor of a feature map.

    The per-channel mean is removed once, the signal is cut into
    ``frame_len``-sample frames every ``hop`` samples (partial trailing
    frames dropped), each frame is windowed and transformed by a one-sided
    FFT, and the magnitude-squared spectra are averaged over frames.
    """
    h = check_feature_map(h)
    if cfg.frame_len > h.shape[1]:
        raise ConfigMismatch(
            f"frame_len {cfg.frame_len} exceeds series length {h.shape[1]}"
        )
    return PowerSpectrum(data=_welch(h, cfg), fingerprint=cfg.fingerprint())


def rfft(h: np.ndarray) -> ComplexSpectrum:
    """One-sided unnormalized DFT of each channel."""
    h = check_feature_map(h)
    return ComplexSpectrum(data=np.fft.rfft(h, axis=-1), original_len=h.shape[1])


def irfft(spectrum: ComplexSpectrum, length: int) -> np.ndarray:
    """Inverse of :func:`rfft` for a known original length.

    The one-sided representation enforces conjugate symmetry, so the output
    is real by construction.
    """
    if spectrum.data.shape[1] != length // 2 + 1:
        raise ShapeMismatch(
            f"{spectrum.data.shape[1]} bins cannot invert to length {length}"
        )
    return np.fft.irfft(spectrum.data, n=length, axis=-1)


def interp_freq_bins(mask: np.ndarray, target_bins: int) -> np.ndarray:
    """Piecewise-linear resample of a ``(C, F)`` mask to ``(C, target_bins)``.

    Normalized frequencies ``f/(F-1)`` map onto ``f'/(target_bins-1)``;
    endpoints map to endpoints, and an equal bin count returns an exact copy.
    """
    mask = np.asarray(mask, dtype=float)
    if mask.ndim != 2 or mask.shape[1] < 2:
        raise ShapeMismatch(f"mask must be (C, F) with F >= 2, got {mask.shape}")
    if target_bins < 2:
        raise ShapeMismatch(f"target_bins must be >= 2, got {target_bins}")
    return _interp_bins(mask, target_bins)
