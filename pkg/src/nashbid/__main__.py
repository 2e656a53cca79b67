"""Allow ``python -m nashbid``."""

from nashbid.cli import cli

if __name__ == "__main__":
    cli()
