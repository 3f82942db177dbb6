"""Exception types raised across the pipeline."""


class SignFusionError(Exception):
    pass


class WrongLength(SignFusionError, ValueError):
    pass


class EmptyInput(SignFusionError, ValueError):
    pass


class NotFitted(SignFusionError, RuntimeError):
    pass


class EmptyImage(SignFusionError, ValueError):
    pass


class EmptySequence(SignFusionError, ValueError):
    pass


class MissingImage(SignFusionError, FileNotFoundError):
    pass


class MalformedCsv(SignFusionError, ValueError):
    pass


class UnknownLayout(SignFusionError, ValueError):
    pass


class TooFewSamples(SignFusionError, ValueError):
    pass


class BadFactorization(SignFusionError, ValueError):
    pass


class ShapeMismatch(SignFusionError, ValueError):
    pass


class StaleCache(SignFusionError, RuntimeError):
    pass


class NonFiniteLoss(SignFusionError, FloatingPointError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class IndexOutOfRange(SignFusionError, IndexError):
    pass


class LengthMismatch(SignFusionError, ValueError):
    pass


class EmptyEvaluation(SignFusionError, ValueError):
    pass


class LabelTableMismatch(SignFusionError, ValueError):
    pass


class ConfigError(SignFusionError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ModalityError(SignFusionError, RuntimeError):
    """Wraps a training failure with the modality that produced it."""

    def __init__(self, modality, cause):
        super().__init__(f"[{modality}] {cause}")
        self.modality = modality
        self.cause = cause
