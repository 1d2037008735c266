"""Exception types shared across the package.

CLI exit-code mapping: ValidationError and subclasses -> 2,
TrainingDiverged -> 3, anything else -> ordinary traceback.
"""


class ValidationError(ValueError):
    """Bad input data, file format, or configuration."""


class LexiconError(ValidationError):
    """Malformed lexicon file or inconsistent concept relations."""


class ConfigError(ValidationError):
    """Unknown key or unparseable value in a run configuration."""


class ShapeError(ValidationError):
    """Array shape does not match what an operation expects."""


class TrainingDiverged(RuntimeError):
    """A loss became non-finite during optimization."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
