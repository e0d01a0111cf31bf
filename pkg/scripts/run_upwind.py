"""Upwind scheme error against the exact shift, in L1 and in KR distance."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("upwind"))
