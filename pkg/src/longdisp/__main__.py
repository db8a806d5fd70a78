"""Run the command-line interface via ``python -m longdisp``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
