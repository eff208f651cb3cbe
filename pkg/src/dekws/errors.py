"""Shared exception types.

Every failure mode in the public API raises one of these, so callers (and the
CLI exit-code mapping) can discriminate without string matching.
"""


class DekwsError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(DekwsError, ValueError):
    """An argument violates an operation's precondition (bad value)."""


class InvalidShapeError(DekwsError, ValueError):
    """Array arguments have inconsistent or unsupported shapes."""


class TrainingFaultError(DekwsError, RuntimeError):
    """A non-finite loss or gradient was produced; the step is aborted."""


class EmptyBufferError(DekwsError, RuntimeError):
    """A batch was requested from a replay buffer that holds no entries."""


class UnsupportedFormatError(DekwsError, ValueError):
    """An audio file is not mono 16-bit PCM at the expected rate.

    The message names the offending field (e.g. "channels", "sample rate").
    """


class InvalidDatasetError(DekwsError, ValueError):
    """A dataset directory or manifest fails structural validation."""


class InvalidScheduleError(DekwsError, ValueError):
    """A task schedule is arithmetically inconsistent or uncovered by data."""


class InvalidConfigError(DekwsError, ValueError):
    """An experiment config fails parsing or cross-field validation."""


class UndefinedMetricError(DekwsError, ValueError):
    """A metric is undefined for the given matrix (e.g. BWT with one task)."""


class CheckpointError(DekwsError, ValueError):
    """A checkpoint file is malformed or of an unsupported version."""
