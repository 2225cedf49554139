"""Exception hierarchy for the whole toolchain.

Every failure a caller can act on gets its own class; generic wrappers are
avoided so tests and the CLI can match precisely.
"""


class CrackEdgeError(Exception):
    """Base class for all crackedge errors."""


# graph construction and shape inference


class ShapeMismatch(CrackEdgeError):
    """Tensor shapes are inconsistent (weight/activation channel mismatch etc.)."""


class NonPositiveDim(CrackEdgeError):
    """A declared or computed dimension is smaller than 1."""


class InvalidArity(CrackEdgeError):
    """A builder was given the wrong number of structural arguments."""


class ShapesNotInferred(CrackEdgeError):
    """Operation requires concrete activation shapes; run shape inference first."""


# model / image I/O


class ParseError(CrackEdgeError):
    """Input file is malformed. Message carries location context when known."""


class UnsupportedMaxval(ParseError):
    """PPM/PGM maxval other than 255."""


class WeightLengthMismatch(CrackEdgeError):
    """Weights blob size disagrees with the declared element counts."""


class UnknownOpKind(CrackEdgeError):
    """Graph descriptor names an operator this IR does not define."""


class IoError(CrackEdgeError):
    """Filesystem write/read failed."""


class MissingClassDir(CrackEdgeError):
    """Dataset root lacks a positive/ or negative/ subdirectory."""


# device compatibility


class EmptyGraphAfterStrip(CrackEdgeError):
    """Stripping unsupported trailing ops would delete every node."""


# optimization passes


class EmptyCalibrationSet(CrackEdgeError):
    """Calibration requires at least one sample."""


class NonFiniteRange(CrackEdgeError):
    """Calibration min/max is NaN or infinite."""


class MissingStats(CrackEdgeError):
    """No calibration record for a tensor that needs quantization parameters."""


class MultiplierOutOfRange(CrackEdgeError):
    """Requantization multiplier outside (2**-40, 2**8)."""


class InvalidSparsity(CrackEdgeError):
    """Pruning sparsity must lie in [0, 1)."""


class InvalidK(CrackEdgeError):
    """Weight clustering needs k >= 2."""


# enef archives


class EnefError(CrackEdgeError):
    """Base class for archive pack/unpack failures."""


class InvariantViolation(EnefError):
    """Quantized model handed to pack() violates its invariants."""


class BadMagic(EnefError):
    """Bytes do not start with the ENEF magic."""


class UnsupportedVersion(EnefError):
    """Archive version is not one this reader understands."""


class ChecksumMismatch(EnefError):
    """CRC-32 trailer does not match the archive contents."""


class TruncatedSection(EnefError):
    """Archive ends before a declared section or the fixed header completes."""


class MalformedTable(EnefError):
    """A section decodes to structurally invalid content."""


# runtime


class WrongChannelCount(CrackEdgeError):
    """Pre-processing needs a 3-channel image."""


class NotDeployable(CrackEdgeError):
    """Graph contains ops outside the integer kernel set."""


class EmptyBatch(CrackEdgeError):
    """No images left to measure after the warmup discard."""


class EmptyDataset(CrackEdgeError):
    """Evaluation needs at least one sample."""
