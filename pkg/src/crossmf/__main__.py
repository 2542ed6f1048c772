"""Entry point for python -m crossmf."""

import sys

from crossmf.cli import main

if __name__ == "__main__":
    sys.exit(main())
