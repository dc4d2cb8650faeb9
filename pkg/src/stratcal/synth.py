"""Synthetic heterogeneous domains: latent spectral structures observed
through domain-specific frequency responses.

Each latent structure is a set of spectral peaks per channel (an amplitude
profile over normalized frequency in [0, 0.5]); a domain realizes one
structure through its own smooth per-channel gain curve plus white noise.
Samples are sums of sinusoids at the structure's peak frequencies with
uniformly random phases; class labels shift the peak frequencies by small
per-class offsets, so labels ride on frequency, not on amplitude, and
amplitude calibration can neither erase nor reveal them directly.

All generation is seeded and reproducible; class counts per domain are
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import InvalidInput, ShapeMismatch, UnknownScenario, UnknownStructure

DATASET_FORMAT_VERSION = 1

SCENARIOS = ("homogeneous", "two_structure", "paper_like")

# Desk-scale defaults shared by the canned scenarios.
DEFAULT_SERIES_LEN = 256
DEFAULT_CHANNELS = 2


@dataclass(frozen=True)
class Peak:
    """One spectral line: center in normalized frequency, half-width of the
    per-sample frequency jitter, amplitude gain."""

    center: float
    bandwidth: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.center < 0.5):
            raise InvalidInput(f"peak center must lie strictly in (0, 0.5), got {self.center}")
        if self.bandwidth < 0:
            raise InvalidInput("bandwidth must be >= 0")
        if not (self.gain > 0):
            raise InvalidInput("peak gain must be > 0")


@dataclass(frozen=True)
class ClassSignature:
    """Per-class perturbation: a frequency offset added to every peak and a
    deterministic phase offset added to the random phase."""

    freq_offset: float = 0.0
    phase_offset: float = 0.0


@dataclass(frozen=True)
class LatentStructure:
    """Stable spectral pattern: per-channel peak lists plus class signatures."""

    id: int
    peaks: tuple  # tuple over channels of tuples of Peak
    class_signatures: tuple  # tuple of ClassSignature

    @property
    def n_channels(self) -> int:
        return len(self.peaks)

    @property
    def n_classes(self) -> int:
        return len(self.class_signatures)


@dataclass(frozen=True)
class DomainSpec:
    """One data domain: which structure it realizes, its frequency response,
    noise level, per-class sample count, and seed.

    ``amp_jitter`` is the std of a per-sample, per-channel lognormal factor
    on the response gain, modelling within-domain amplitude variability
    (0 disables it)."""

    id: int
    structure_id: int
    response: tuple  # tuple over channels of tuples of (freq, gain) control points
    noise_std: float = 0.0
    n_per_class: int = 40
    seed: int = 0
    amp_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise InvalidInput("noise_std must be >= 0")
        if self.n_per_class < 1:
            raise InvalidInput("n_per_class must be >= 1")
        if self.amp_jitter < 0:
            raise InvalidInput("amp_jitter must be >= 0")
        for channel_points in self.response:
            for _, gain in channel_points:
                if not (gain > 0):
                    raise InvalidInput("response gains must be > 0 everywhere")

    def gain_at(self, channel: int, freq: float) -> float:
        """Linearly interpolated response of one channel at one frequency."""
        points = self.response[channel]
        freqs = np.array([p[0] for p in points])
        gains = np.array([p[1] for p in points])
        return float(np.interp(freq, freqs, gains))


@dataclass(frozen=True)
class DomainData:
    """Generated samples of one domain. All reads go through samples()
    so experiment code can be audited for data access."""

    domain_id: int
    x: np.ndarray  # (n, C_in, T)
    y: np.ndarray  # (n,)
    structure_id: int = -1

    def samples(self):
        return self.x, self.y

    def __len__(self) -> int:
        return self.x.shape[0]


def generate_domain(
    spec: DomainSpec,
    structures,
    series_len: int = DEFAULT_SERIES_LEN,
    n_channels: int = DEFAULT_CHANNELS,
) -> DomainData:
    """Draw all samples of one domain; deterministic given ``spec.seed``."""
    by_id = {s.id: s for s in structures}
    if spec.structure_id not in by_id:
        raise UnknownStructure(f"no latent structure with id {spec.structure_id}")
    structure = by_id[spec.structure_id]
    if structure.n_channels != n_channels:
        raise ShapeMismatch(
            f"structure {structure.id} describes {structure.n_channels} channels, "
            f"requested {n_channels}"
        )
    if series_len < 64:
        raise InvalidInput("series_len must be >= 64")

    rng = np.random.default_rng(spec.seed)
    t = np.arange(series_len)
    n_classes = structure.n_classes
    total = n_classes * spec.n_per_class
    x = np.zeros((total, n_channels, series_len))
    y = np.repeat(np.arange(n_classes), spec.n_per_class)

    for i in range(total):
        signature = structure.class_signatures[y[i]]
        for ch in range(n_channels):
            for peak in structure.peaks[ch]:
                freq = peak.center + signature.freq_offset
                if peak.bandwidth > 0:
                    freq += rng.uniform(-peak.bandwidth / 2, peak.bandwidth / 2)
                amplitude = peak.gain * spec.gain_at(ch, freq)
                if spec.amp_jitter > 0:
                    amplitude *= float(np.exp(rng.normal(0.0, spec.amp_jitter)))
                phase = rng.uniform(0.0, 2.0 * np.pi) + signature.phase_offset
                x[i, ch] += amplitude * np.cos(2.0 * np.pi * freq * t + phase)
        if spec.noise_std > 0:
            x[i] += rng.normal(0.0, spec.noise_std, size=(n_channels, series_len))

    return DomainData(domain_id=spec.id, x=x, y=y, structure_id=spec.structure_id)


def _flat_response(gain0: float, gain1: float) -> tuple:
    return (
        ((0.0, gain0), (0.5, gain0)),
        ((0.0, gain1), (0.5, gain1)),
    )


def _tilted_response(structure: LatentStructure, bases, tilts) -> tuple:
    """Per-channel response with a local gain ramp across the channel's peak
    band: flat at ``base`` below the band, ramping to ``base * tilt`` just
    above it. Tilts > 1 and < 1 reverse the amplitude ordering of the class
    frequency offsets between domains."""
    channels = []
    for ch, (base, tilt) in enumerate(zip(bases, tilts)):
        center = structure.peaks[ch][0].center
        channels.append(
            (
                (0.0, base),
                (center - 0.01, base),
                (center + 0.025, base * tilt),
                (0.5, base * tilt),
            )
        )
    return tuple(channels)


_CLASS_OFFSETS = (0.0, 0.006, 0.012)
_SIGNATURES = tuple(ClassSignature(freq_offset=o) for o in _CLASS_OFFSETS)

# Single-line structures for the simple scenarios.
_STRUCTURE_A = LatentStructure(
    id=0,
    peaks=(
        (Peak(center=0.07, gain=1.0),),
        (Peak(center=0.11, gain=0.9),),
    ),
    class_signatures=_SIGNATURES,
)

_STRUCTURE_B = LatentStructure(
    id=1,
    peaks=(
        (Peak(center=0.27, gain=1.0),),
        (Peak(center=0.35, gain=0.9),),
    ),
    class_signatures=_SIGNATURES,
)

# Multi-line structures for paper_like: three lines per channel whose
# amplitudes jitter independently per sample, so uncalibrated feature
# vectors of different classes occupy overlapping cones.
_STRUCTURE_A3 = LatentStructure(
    id=0,
    peaks=(
        (Peak(center=0.06, gain=1.0), Peak(center=0.10, gain=0.8), Peak(center=0.14, gain=0.9)),
        (Peak(center=0.08, gain=0.9), Peak(center=0.12, gain=1.0), Peak(center=0.16, gain=0.7)),
    ),
    class_signatures=_SIGNATURES,
)

_STRUCTURE_B3 = LatentStructure(
    id=1,
    peaks=(
        (Peak(center=0.27, gain=0.9), Peak(center=0.31, gain=1.0), Peak(center=0.35, gain=0.8)),
        (Peak(center=0.29, gain=1.0), Peak(center=0.33, gain=0.7), Peak(center=0.37, gain=0.9)),
    ),
    class_signatures=_SIGNATURES,
)


def make_scenario(name: str, base_seed: int = 0):
    """Canned reproducible scenarios: ``(domain specs, structures)``.

    homogeneous: one structure, four domains with different gains.
    two_structure: two disjoint-band structures, two domains each, noiseless.
    paper_like: two structures across five domains whose per-channel gains
    differ strongly, so amplitude is a misleading cue across domains.
    """
    if name == "homogeneous":
        structures = [_STRUCTURE_A]
        gains = [(1.0, 1.0), (1.3, 0.8), (0.8, 1.2), (1.1, 1.1)]
        specs = [
            DomainSpec(
                id=d,
                structure_id=0,
                response=_flat_response(*g),
                noise_std=0.05,
                n_per_class=40,
                seed=base_seed * 1009 + d,
            )
            for d, g in enumerate(gains)
        ]
        return specs, structures

    if name == "two_structure":
        structures = [_STRUCTURE_A, _STRUCTURE_B]
        layout = [(0, (1.0, 1.0)), (0, (1.15, 0.9)), (1, (1.0, 1.0)), (1, (0.9, 1.1))]
        specs = [
            DomainSpec(
                id=d,
                structure_id=sid,
                response=_flat_response(*g),
                noise_std=0.0,
                n_per_class=40,
                seed=base_seed * 1009 + d,
            )
            for d, (sid, g) in enumerate(layout)
        ]
        return specs, structures

    if name == "paper_like":
        # Two structures over five domains. Spectral-line amplitudes jitter
        # independently per sample and per line, and base gains differ per
        # domain and channel: amplitude patterns are a spurious cue across
        # domains while the class frequency offsets stay stable.
        structures = [_STRUCTURE_A3, _STRUCTURE_B3]
        layout = [
            (0, (1.00, 0.90)),
            (0, (0.85, 1.15)),
            (0, (1.20, 0.80)),
            (1, (0.90, 1.10)),
            (1, (1.15, 0.85)),
        ]
        specs = [
            DomainSpec(
                id=d,
                structure_id=sid,
                response=_flat_response(*bases),
                noise_std=0.05,
                n_per_class=40,
                seed=base_seed * 1009 + d,
                amp_jitter=0.35,
            )
            for d, (sid, bases) in enumerate(layout)
        ]
        return specs, structures

    raise UnknownScenario(f"unknown scenario {name!r} (choose from {SCENARIOS})")


def generate_scenario(
    name: str,
    base_seed: int = 0,
    series_len: int = DEFAULT_SERIES_LEN,
    n_channels: int = DEFAULT_CHANNELS,
):
    """Domain data for a named scenario."""
    specs, structures = make_scenario(name, base_seed)
    return [generate_domain(s, structures, series_len, n_channels) for s in specs]


def save_dataset(domains, path, meta_extra: dict | None = None) -> None:
    meta = {
        "domain_ids": [int(d.domain_id) for d in domains],
        "structure_ids": [int(d.structure_id) for d in domains],
        **(meta_extra or {}),
    }
    arrays = {}
    for d in domains:
        arrays[f"x_{d.domain_id}"] = d.x
        arrays[f"y_{d.domain_id}"] = d.y.astype(float)
    write_container(path, "dataset", DATASET_FORMAT_VERSION, meta, arrays)


def load_dataset(path):
    meta, arrays = read_container(path, "dataset", DATASET_FORMAT_VERSION)
    domains = []
    for did, sid in zip(meta["domain_ids"], meta.get("structure_ids", [])):
        domains.append(
            DomainData(
                domain_id=int(did),
                x=arrays[f"x_{did}"],
                y=arrays[f"y_{did}"].astype(int),
                structure_id=int(sid),
            )
        )
    return domains, meta
