"""Error types shared across the package."""


class ConfigError(ValueError):
    """Invalid or missing configuration value."""


class UnsupportedRegimeError(ConfigError):
    """Parameter set violates the wave-speed ordering assumption.

    The design requires the transport speeds to satisfy
    1/sqrt(eps) < 1/sqrt(mu1) < 1/sqrt(mu2); other orderings would need the
    state components permuted and are not supported here.
    """


class DivergenceError(RuntimeError):
    """A fixed-point iteration or time integration blew up."""

    def __init__(self, message, last_norm=None, step=None):
        super().__init__(message)
        self.last_norm = last_norm
        self.step = step


class VerificationError(RuntimeError):
    """A verification check failed (used by the CLI to exit with code 3)."""
