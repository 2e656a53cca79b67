# This file containts the version  # noqa: D100
__version__ = "v0.1.0"
__config_version__ = "1"
