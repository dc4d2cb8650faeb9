"""Exception hierarchy shared by all stratcal modules.

Every error carries a CLI exit code: 1 for validation problems, 2 for I/O
and file-format problems, 3 for violated data invariants.
"""


class StratcalError(Exception):
    """Base class for all stratcal errors."""

    exit_code = 1


class InvalidInput(StratcalError):
    """Input data failed validation (non-finite values, bad ranges)."""


class ShapeMismatch(InvalidInput):
    """Array shapes are inconsistent with each other or with a config."""


class ConfigMismatch(InvalidInput):
    """Spectral configs (or their fingerprints) disagree."""


class InvalidK(InvalidInput):
    """Requested cluster count is out of range for the data."""


class EmptyCluster(StratcalError):
    """A stratum ended up with no members."""


class RankOutOfRange(InvalidInput):
    """Matching rank R outside [1, K]."""


class LabelOutOfRange(InvalidInput):
    """Class label outside [0, n_classes)."""


class StateError(StratcalError):
    """Operation called without the required prior state (e.g. no cached forward)."""


class UnknownStructure(InvalidInput):
    """Domain spec references a latent structure id that does not exist."""


class UnknownScenario(InvalidInput):
    """Unrecognized scenario name."""


class EmptyMatrix(InvalidInput):
    """Metric requested on an empty confusion matrix."""


class IoError(StratcalError):
    """File could not be read or written."""

    exit_code = 2


class FormatError(StratcalError):
    """File exists but is corrupt, truncated, or has a mismatched version."""

    exit_code = 2


class InvariantViolation(StratcalError):
    """Loaded data violates a structural invariant (e.g. tampered anchor file)."""

    exit_code = 3
