"""Structure-stratified spectral calibration for multichannel time series.

Stratify samples by the shape of their channel-wise power spectra, build a
fixed mean-amplitude-squared reference anchor per stratum, and calibrate
each sample's spectral amplitudes toward its matched anchor while leaving
phase untouched. Includes a synthetic heterogeneous-domain testbed and a
leave-one-domain-out experiment harness.
"""

from .anchors import (
    AnchorSet,
    build_anchor,
    build_anchor_set,
    load_anchors,
    save_anchors,
)
from .calibrate import (
    CalibratedFeatureMap,
    CalibrationConfig,
    apply_mask,
    calibrate,
    calibrate_adjoint,
    match_stratum,
    match_stratum_rank,
    scaling_mask,
)
from .harness import (
    ExperimentResult,
    StrategyConfig,
    accuracy,
    confusion_matrix,
    macro_f1,
    run_lodo,
    run_stage1,
    run_stage2,
    sweep_k,
    sweep_rank,
)
from .model import (
    ClassifierParams,
    EncoderParams,
    adam_step,
    backward,
    encode,
    forward_loss,
    sgd_step,
)
from .spectral import (
    ComplexSpectrum,
    PowerSpectrum,
    SpectralConfig,
    interp_freq_bins,
    irfft,
    remove_mean,
    rfft,
    welch_psd,
)
from .stratify import StrataModel, assign_stratum, kmeans_fit
from .synth import (
    ClassSignature,
    DomainData,
    DomainSpec,
    LatentStructure,
    Peak,
    generate_domain,
    generate_scenario,
    load_dataset,
    make_scenario,
    save_dataset,
)

__all__ = [
    "AnchorSet",
    "CalibratedFeatureMap",
    "CalibrationConfig",
    "ClassSignature",
    "ClassifierParams",
    "ComplexSpectrum",
    "DomainData",
    "DomainSpec",
    "EncoderParams",
    "ExperimentResult",
    "LatentStructure",
    "Peak",
    "PowerSpectrum",
    "SpectralConfig",
    "StrataModel",
    "StrategyConfig",
    "accuracy",
    "adam_step",
    "apply_mask",
    "assign_stratum",
    "backward",
    "build_anchor",
    "build_anchor_set",
    "calibrate",
    "calibrate_adjoint",
    "confusion_matrix",
    "encode",
    "forward_loss",
    "generate_domain",
    "generate_scenario",
    "interp_freq_bins",
    "irfft",
    "kmeans_fit",
    "load_anchors",
    "load_dataset",
    "macro_f1",
    "make_scenario",
    "match_stratum",
    "match_stratum_rank",
    "remove_mean",
    "rfft",
    "run_lodo",
    "run_stage1",
    "run_stage2",
    "save_anchors",
    "save_dataset",
    "scaling_mask",
    "sgd_step",
    "sweep_k",
    "sweep_rank",
    "welch_psd",
]

__version__ = "0.1.0"
