"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` used by the CLI: 2 for configuration
problems, 3 for bad input data, 4 for numerical divergence.
"""


class TweetMisinfoError(Exception):
    exit_code = 1


class ConfigError(TweetMisinfoError, ValueError):
    exit_code = 2


class DataError(TweetMisinfoError, ValueError):
    exit_code = 3


class NumericalError(TweetMisinfoError, ArithmeticError):
    exit_code = 4


# textnorm
class EmptyAfterNormalization(DataError):
    pass


class UnknownLabel(DataError):
    pass


# embed
class FormatError(DataError):
    pass


class TruncatedFile(FormatError):
    pass


class NonFiniteValue(DataError):
    pass


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# classifier
class BatchTooSmall(DataError):
    pass


class StaleCache(TweetMisinfoError, RuntimeError):
    pass


class NonFiniteActivation(NumericalError):
    def __init__(self, layer, message=None):
        self.layer = layer
        super().__init__(message or f"non-finite activation in layer {layer!r}")


class DivergedLoss(NumericalError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"loss became non-finite at epoch {epoch}")


# pipeline
class ClassTooSmall(DataError):
    def __init__(self, label, count, k):
        self.label = label
        self.count = count
        super().__init__(f"class {label!r} has {count} samples, need at least {k}")


# metrics
class LengthMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class MissingPrediction(DataError):
    pass
