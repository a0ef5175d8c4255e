"""
Exception hierarchy shared by the models, controllers and the command line.

Library code raises these; main.py maps them to process exit codes.
"""


class PointSeqError(Exception):
    """Base class for every error raised by pointseq."""


class EmptyInputError(PointSeqError):
    def __init__(self, what="point cloud"):
        super().__init__(f"empty input: {what}")


class SampleSizeError(PointSeqError):
    def __init__(self, requested, population):
        self.requested = requested
        self.population = population
        super().__init__(f"sample larger than population ({requested} > {population})")


class InvalidParameterError(PointSeqError):
    """A value outside the documented range (negative r, bad probability, width mismatch...)."""


class UsageError(PointSeqError):
    """Inconsistent command line or config file."""


class ParseError(PointSeqError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class NumericalOverflowError(PointSeqError):
    """Non-finite activations. Raised from train, it also carries the epoch and the partial report."""

    def __init__(self, layer_index, where="encoder", epoch=None, report=None):
        self.layer_index = layer_index
        self.where = where
        self.epoch = epoch
        self.report = report
        message = f"numerical overflow in {where} layer {layer_index}"
        if epoch is not None:
            message += f" at epoch {epoch}"
        super().__init__(message)


class TrainingDivergedError(PointSeqError):
    """Raised when the loss stops being finite. `report` holds the epochs completed so far."""

    def __init__(self, epoch, report):
        self.epoch = epoch
        self.report = report
        super().__init__(f"training diverged at epoch {epoch} (non-finite loss)")
