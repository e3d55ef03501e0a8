"""Runs the primal-dual-lab command line as `python -m primal_dual_lab <command> ...`."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
