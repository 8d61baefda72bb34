"""Exception hierarchy shared by every module."""


class NNCompressError(Exception):
    """Base class for all domain errors raised by this package."""


class FormatError(NNCompressError):
    """Bad magic bytes, unsupported version or unparsable manifest."""


class CorruptionError(NNCompressError):
    """Checksum mismatch, truncated payload or out-of-range code."""


class ManifestError(FormatError):
    """Structurally invalid manifest (duplicate names, bad roles, ...)."""


class ConfigError(NNCompressError):
    """A quantization spec, tying plan or NIP config is inconsistent with the model."""


class PlanError(ConfigError):
    """Tying plan incompatible with the network."""


class DegenerateDistributionError(NNCompressError):
    """Statistics requested on data without spread."""


class ShapeError(NNCompressError):
    """Tensor shapes do not line up."""
