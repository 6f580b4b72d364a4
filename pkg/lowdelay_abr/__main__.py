"""
Main entry point for the lowdelay-abr package.

This module allows the package to be run as:
    python -m lowdelay_abr
"""

from .cli import main

if __name__ == "__main__":
    import sys

    sys.exit(main())
