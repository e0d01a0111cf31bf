"""Run every study in sequence; exit 2 if any contract fails."""

import sys

from _common import main

STUDIES = ("oscillating", "diffusion", "upwind", "mixing", "lagrangian")

if __name__ == "__main__":
    codes = [main(s, sys.argv[1:]) for s in STUDIES]
    sys.exit(max(codes))
