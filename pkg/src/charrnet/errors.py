"""Exception types shared across the package."""


class SizeError(ValueError):
    """An operand's length or shape violates a transform/framing contract."""


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""
