"""Exception types shared across the package."""


class DacerError(Exception):
    pass


class DimensionError(DacerError, ValueError):
    """Operand shapes do not line up."""


class ConfigurationError(DacerError, ValueError):
    """A configuration value is outside its allowed range."""


class ContractError(DacerError, ValueError):
    """A precondition of an operation was violated."""


class NumericFaultError(DacerError, ArithmeticError):
    """A NaN/inf showed up where finite numbers are required."""


class CheckpointError(DacerError):
    """A checkpoint file does not match the parameters it is loaded into."""
