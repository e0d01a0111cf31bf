"""Mixing scale of a checkerboard under alternating shears, with H^-1 and BV."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("mixing"))
