"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, SetupError -> 2,
RunAbort -> 3.
"""


class ChannelError(Exception):
    """Base class for all pfchan errors."""


class ConfigError(ChannelError):
    """Invalid configuration or usage."""


class SetupError(ChannelError):
    """A required backend capability is missing or setup failed."""


class RunAbort(ChannelError):
    """A transmission had to be abandoned at runtime."""
