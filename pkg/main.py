"""Entry point: ``python main.py <command> ...`` is equivalent to ``oct-progression <command> ...``."""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
