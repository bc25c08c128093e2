"""Exception hierarchy shared by every module."""


class DnsRoutineError(Exception):
    """Base class for all library errors."""


class ArgumentError(DnsRoutineError, ValueError):
    """An argument violates an operation's precondition."""


class FormatError(DnsRoutineError):
    """An input file does not follow its declared layout."""


class CorpusError(DnsRoutineError):
    """A corpus is empty or too damaged to use."""


class TrainingError(DnsRoutineError):
    """Training could not start or diverged."""


class ModelFileError(DnsRoutineError):
    """A model file could not be loaded."""


class CorruptModelError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


class MetricError(DnsRoutineError):
    """A metric is undefined for the given inputs."""


class ConfigError(DnsRoutineError):
    """Run configuration is inconsistent with a model or corpus."""
