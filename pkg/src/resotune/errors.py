"""Exception types shared across the toolkit."""


class ResotuneError(Exception):
    """Base class for all toolkit errors."""


class NotAJpeg(ResotuneError):
    """Stream does not start with an SOI marker."""


class TruncatedHeader(ResotuneError):
    """Stream ends before the first SOS marker."""


class ZeroScans(ResotuneError):
    """A scan count of zero was requested; at least one scan is always read."""


class DecodeFailure(ResotuneError):
    """Decoding failed; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NotProgressive(ResotuneError):
    """A progressive stream was required but a baseline one was supplied."""

    def __init__(self, name: str):
        super().__init__(f"not a progressive JPEG: {name}")
        self.name = name


class EmptyTarget(ResotuneError):
    """Resize target has a zero dimension."""


class DimensionMismatch(ResotuneError):
    """Two rasters that must match in shape do not."""


class EmptyDataset(ResotuneError):
    """Calibration or evaluation was given no images."""


class BackendFailure(ResotuneError):
    """A model backend failed or violated the wire protocol."""


class MissingThreshold(ResotuneError):
    """Threshold table does not cover the requested resolution."""


class UnknownEntry(ResotuneError):
    """FLOPs table has no entry for the (model, resolution) pair."""


class EmptyScores(ResotuneError):
    """Scale model produced no per-resolution scores."""


class TooFewExamples(ResotuneError):
    """Dataset smaller than the number of requested shards."""


class ShapeMismatch(ResotuneError):
    """Tensor arguments do not match the declared convolution shape."""


class InvalidSchedule(ResotuneError):
    """Schedule is not valid for the shape (tile exceeds extent, bad vector width)."""


class NoValidSchedule(ResotuneError):
    """Search space contains no valid schedule for a degenerate shape."""


class ConfigError(ResotuneError):
    """Experiment or CLI configuration failed validation."""
