class GreenFuzzError(Exception):
    """Base class for all greenfuzz errors."""


class ConfigError(GreenFuzzError):
    """Invalid configuration or usage. The CLI maps this to exit code 2."""
