"""Eulerian KR distance versus the Lagrangian log-distance bound over time."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("lagrangian"))
