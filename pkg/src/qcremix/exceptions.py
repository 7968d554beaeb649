"""Exception hierarchy shared across the package.

Every error carries a CLI exit code so the command line front end can map
failures without inspecting messages.
"""


class QCRemixError(Exception):
    exit_code = 1


class AudioIOError(QCRemixError, OSError):
    """A file could not be read or written."""

    exit_code = 2


class MissingFileError(AudioIOError, FileNotFoundError):
    pass


class FormatError(QCRemixError, ValueError):
    """Input data is well-read but has the wrong shape, rate or encoding."""

    exit_code = 3


class UnsupportedFormatError(FormatError):
    pass


class TruncatedDataError(FormatError):
    pass


class SampleRateError(FormatError):
    pass


class AlignmentError(FormatError):
    pass


class CheckpointError(QCRemixError):
    exit_code = 4


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class EmptyDatasetError(QCRemixError):
    exit_code = 5


class JoinError(QCRemixError, KeyError):
    exit_code = 6

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("unmatched item ids: " + ", ".join(self.missing))

    def __str__(self):
        return self.args[0]


class DegenerateDataError(QCRemixError, ValueError):
    """Statistics are undefined for the given data (zero variance, equal abscissae)."""

    exit_code = 3
