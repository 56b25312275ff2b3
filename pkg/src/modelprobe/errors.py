"""Exception hierarchy shared across the pipeline."""


class ModelProbeError(Exception):
    """Base class for all domain errors raised by this package."""


class IoFailure(ModelProbeError):
    """Filesystem or archive I/O failed."""


class NotAnArchive(ModelProbeError):
    """Input file is not a valid ZIP container."""


class ModelFormatError(ModelProbeError):
    """Model bytes violate the TFLite container format."""


class BadMagic(ModelFormatError):
    """File identifier at offset 4 is not the TFLite identifier."""


class Truncated(ModelFormatError):
    """A structural read ran past the end of the buffer."""


class UnsupportedVersion(ModelFormatError):
    """Schema version other than 3."""


class ShapeMismatch(ModelProbeError):
    """Tensor shape does not match the model's input spec."""


class UnsupportedOp(ModelProbeError):
    """Model contains an operator outside the executable subset."""


class CorruptRegistry(ModelProbeError):
    """Fingerprint digests do not match the stored weight blob."""


class EmptyRegistry(ModelProbeError):
    """Operation requires at least one registry entry."""


class EmptyExampleSet(ModelProbeError):
    """No usable labeled examples remain after filtering."""


class LengthMismatch(ModelProbeError):
    """Paired series have different lengths."""
