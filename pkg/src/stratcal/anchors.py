"""Per-stratum reference anchors: mean-amplitude-squared spectrum templates.

Each stratum's amplitude template is the per-bin mean of the members'
amplitude spectra, ``A(c, f) = mean_i sqrt(P_i(c, f) + eps)``, and the
power anchor is its element-wise square. Averaging amplitudes before
squaring keeps the anchor below the arithmetic mean of member powers
(Jensen), so rare large-power outliers pull it up less than a plain power
average would. Anchors are built once from source data and then fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import ConfigMismatch, EmptyCluster, InvalidInput, InvariantViolation, ShapeMismatch
from .spectral import PowerSpectrum, SpectralConfig
from .stratify import StrataModel

ANCHOR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AnchorSet:
    """Fixed calibration references for ``k`` strata.

    ``amplitude_templates`` and ``power_anchors`` are ``(k, C, F)`` arrays
    with ``power_anchors == amplitude_templates ** 2`` element-wise. The
    fitted strata model and the spectral config that produced the member
    spectra travel with the anchors so consumers can verify compatibility.
    """

    k: int
    amplitude_templates: np.ndarray
    power_anchors: np.ndarray
    strata: StrataModel
    spectral_cfg: SpectralConfig
    eps: float
    format_version: int = ANCHOR_FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(
            self, "amplitude_templates", np.asarray(self.amplitude_templates, dtype=float)
        )
        object.__setattr__(self, "power_anchors", np.asarray(self.power_anchors, dtype=float))
        self.validate()

    def validate(self) -> None:
        amp, power = self.amplitude_templates, self.power_anchors
        if amp.ndim != 3 or amp.shape != power.shape or amp.shape[0] != self.k:
            raise InvariantViolation(
                f"anchor arrays must both be ({self.k}, C, F); "
                f"got {amp.shape} and {power.shape}"
            )
        if amp.shape[2] != self.spectral_cfg.n_bins:
            raise InvariantViolation(
                f"{amp.shape[2]} bins inconsistent with frame_len "
                f"{self.spectral_cfg.frame_len}"
            )
        if not (np.all(np.isfinite(amp)) and np.all(np.isfinite(power))):
            raise InvariantViolation("anchor arrays contain NaN or Inf")
        if not (self.eps > 0):
            raise InvariantViolation("eps must be > 0")
        # every amplitude aggregate includes +eps under the root
        if np.any(amp < np.sqrt(self.eps) * (1 - 1e-12)):
            raise InvariantViolation("amplitude template below sqrt(eps) floor")
        if np.max(np.abs(power - amp**2)) > 1e-12 * max(1.0, float(np.max(power))):
            raise InvariantViolation("power anchors are not the squared amplitude templates")
        if self.strata.k != self.k:
            raise InvariantViolation(
                f"strata model has k={self.strata.k}, anchors have k={self.k}"
            )

    def fingerprint(self) -> str:
        return self.spectral_cfg.fingerprint()


def build_anchor(cluster_spectra, eps: float):
    """Amplitude template and power anchor for one stratum.

    Returns ``(A, P_bar)`` where ``A = mean_i sqrt(P_i + eps)`` and
    ``P_bar = A ** 2``.
    """
    spectra = list(cluster_spectra)
    if not spectra:
        raise EmptyCluster("cannot build an anchor from an empty stratum")
    if not (eps > 0):
        raise InvalidInput("eps must be > 0")
    shape = spectra[0].data.shape
    fingerprint = spectra[0].fingerprint
    for p in spectra:
        if p.data.shape != shape or p.fingerprint != fingerprint:
            raise ConfigMismatch("stratum members have mixed shapes or configs")
    amplitude = np.mean([np.sqrt(p.data + eps) for p in spectra], axis=0)
    return amplitude, amplitude**2


def build_anchor_set(
    spectra,
    model: StrataModel,
    cfg: SpectralConfig,
    eps: float | None = None,
) -> AnchorSet:
    """One anchor per stratum, grouped by the model's training assignments."""
    spectra = list(spectra)
    if eps is None:
        eps = cfg.eps
    if len(spectra) != model.assignments.shape[0]:
        raise ShapeMismatch(
            f"{len(spectra)} spectra vs {model.assignments.shape[0]} assignments"
        )
    amplitudes = []
    powers = []
    for stratum in range(model.k):
        members = [p for p, a in zip(spectra, model.assignments) if a == stratum]
        if not members:
            raise EmptyCluster(f"stratum {stratum} has no members")
        amp, power = build_anchor(members, eps)
        amplitudes.append(amp)
        powers.append(power)
    return AnchorSet(
        k=model.k,
        amplitude_templates=np.stack(amplitudes),
        power_anchors=np.stack(powers),
        strata=model,
        spectral_cfg=cfg,
        eps=eps,
    )


def save_anchors(anchor_set: AnchorSet, path) -> None:
    """Persist an anchor set losslessly (see :mod:`stratcal.container`)."""
    meta = {
        "k": anchor_set.k,
        "eps": anchor_set.eps,
        "spectral_cfg": anchor_set.spectral_cfg.to_dict(),
        "strata": {
            "k": anchor_set.strata.k,
            "inertia": anchor_set.strata.inertia,
            "seed": anchor_set.strata.seed,
            "inertia_history": list(anchor_set.strata.inertia_history),
        },
    }
    arrays = {
        "amplitude_templates": anchor_set.amplitude_templates,
        "power_anchors": anchor_set.power_anchors,
        "strata_centers": anchor_set.strata.centers,
        "strata_assignments": anchor_set.strata.assignments.astype(float),
    }
    write_container(path, "anchors", anchor_set.format_version, meta, arrays)


def load_anchors(path) -> AnchorSet:
    """Load and re-validate an anchor set; refuses corrupt or tampered files."""
    meta, arrays = read_container(path, "anchors", ANCHOR_FORMAT_VERSION)
    strata = StrataModel(
        k=int(meta["strata"]["k"]),
        centers=arrays["strata_centers"],
        assignments=arrays["strata_assignments"].astype(int),
        inertia=float(meta["strata"]["inertia"]),
        seed=int(meta["strata"]["seed"]),
        inertia_history=tuple(meta["strata"].get("inertia_history", ())),
    )
    return AnchorSet(
        k=int(meta["k"]),
        amplitude_templates=arrays["amplitude_templates"],
        power_anchors=arrays["power_anchors"],
        strata=strata,
        spectral_cfg=SpectralConfig.from_dict(meta["spectral_cfg"]),
        eps=float(meta["eps"]),
    )
