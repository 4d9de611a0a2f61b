"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the process exit code the command line maps it to.
"""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError, ValueError):
    exit_code = 2


class DataError(PipelineError, ValueError):
    exit_code = 3


class DecodeError(DataError):
    """An image could not be decoded; ``path`` names the offending file."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ShapeError(PipelineError, ValueError):
    exit_code = 2


class LoadError(PipelineError):
    exit_code = 2


class TrainingError(PipelineError, RuntimeError):
    exit_code = 4


class RenderError(PipelineError, OSError):
    exit_code = 5
