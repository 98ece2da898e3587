"""Exception types shared across the toolkit."""


class WavFormatError(ValueError):
    """Raised when a WAV file is malformed or uses an unsupported encoding."""


class ConfigError(ValueError):
    """Raised for invalid policies, fusion specs, or run configuration files."""


class ReconstructionError(RuntimeError):
    """Raised when overlap-add synthesis cannot normalize (degenerate window/hop)."""
