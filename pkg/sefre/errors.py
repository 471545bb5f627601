class SefreError(Exception):
    """Base class for every error raised by sefre."""
    pass

class ConfigError(SefreError):
    """Raised for invalid hyperparameters or mismatched shapes/configuration."""
    pass

class CorpusError(SefreError):
    """Raised when a corpus or schema file does not satisfy the data model."""
    pass

class NonFiniteError(SefreError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str, phase: str = "forward"):
        super().__init__(f"Non-finite values produced by '{op}' during {phase} pass.")
        self.op = op
        self.phase = phase

class GradientCheckError(SefreError):
    """Raised when a finite-difference check cannot be completed."""
    pass

class TrainingAborted(SefreError):
    """Raised when training cannot continue (e.g. filtering emptied the corpus)."""
    pass

class CheckpointError(SefreError):
    """Raised when a checkpoint cannot be read or does not match its inputs."""
    pass
