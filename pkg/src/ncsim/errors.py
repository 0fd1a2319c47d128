"""Exception types shared across the simulator."""


class NcsimError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(NcsimError):
    """Invalid user-supplied parameters (dimensions, signs, ranges)."""


class SolverError(NcsimError):
    """A numerical routine failed to converge."""


class InvariantError(NcsimError):
    """Internal state violated an invariant the code relies on."""
