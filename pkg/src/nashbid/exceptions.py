"""Custom exceptions for nashbid."""
# ruff: noqa: D101


class MarketError(Exception):
    pass


class PolicyError(Exception):
    pass


class RolloutError(Exception):
    pass


class GradientError(Exception):
    pass


class DualUpdateError(Exception):
    pass


class ExploitabilityError(Exception):
    pass


class OracleBoundError(Exception):
    pass


class ConfigError(Exception):
    """Invalid experiment configuration.

    ``field`` holds the dotted name of the offending key when known and
    ``line`` the 1-based line number for parse errors.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line
