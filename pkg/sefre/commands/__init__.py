import os

from ..errors import ConfigError

WORKERS_ENV = "SEFRE_WORKERS"


def workers_from_env() -> int:
    """Inference thread count from SEFRE_WORKERS (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got '{raw}'.") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got '{raw}'.")
    return workers
