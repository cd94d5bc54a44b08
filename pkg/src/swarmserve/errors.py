"""Exception hierarchy shared by every module."""


class SimError(Exception):
    """Base class for all errors raised by swarmserve."""


class ConfigError(SimError, ValueError):
    """Invalid configuration. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class TopologyError(ConfigError):
    """Swarm topology that cannot serve the whole model."""


class NumericDomainError(SimError, ValueError):
    pass


class ContractError(SimError):
    """A caller violated an operation's precondition."""


class CapacityError(SimError):
    """Problem instance too large for an exhaustive routine."""


class OutOfBlocks(SimError):
    """KV memory exhausted; callers are expected to queue and retry."""


class UnsupportedOperation(SimError):
    pass


class RegistrationError(SimError, KeyError):
    pass


class LookupFailure(SimError, KeyError):
    pass


class EvaluationError(SimError):
    pass
