"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or dimensionally inconsistent arguments."""


class CertificationError(RuntimeError):
    """A requested certificate (SPD metric, contraction rate, ...) does not hold."""


class EstimationError(RuntimeError):
    """A sampled estimator could not produce a value (e.g. all pairs degenerate)."""


class CapabilityError(RuntimeError):
    """A required optional ingredient (e.g. equilibrium-map Hessians) is missing."""


class DivergenceError(RuntimeError):
    """A simulated path produced NaN/Inf."""

    def __init__(self, message, step=None, path_index=None):
        super().__init__(message)
        self.step = step
        self.path_index = path_index


class StateCorruptionError(RuntimeError):
    """A bounded process was fed a state outside its invariant domain."""


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class CapacityError(ValueError):
    """Problem size exceeds a documented cap."""


class DomainError(ValueError):
    """A density or function is not usable on the requested domain."""
