"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract."""


class CloudParseError(ValueError):
    """A point-cloud file could not be parsed.

    Carries enough position information (line or byte offset) to locate
    the problem in the file.
    """

    def __init__(self, path, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f", line {line}"
        elif offset is not None:
            loc = f", byte {offset}"
        super().__init__(f"{path}{loc}: {message}")
        self.path = str(path)
        self.line = line
        self.offset = offset


class UnsupportedFormat(CloudParseError):
    """The file is syntactically valid but uses features we do not read."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
