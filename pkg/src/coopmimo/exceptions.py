"""Exception types raised by the simulator."""


class InvalidParameterError(ValueError):
    """A model parameter is outside its admissible range."""


class ConfigError(ValueError):
    """A configuration file or override could not be validated."""


class ZeroBeamformerError(ArithmeticError):
    """A beamformer cannot be normalized because its direction vector is zero."""
