"""Main entry point for the cbsr command line tool."""

import logging
import sys

from cbsr.cli.app import run


def main() -> None:
    """Run the command given on the command line and exit with its code."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
