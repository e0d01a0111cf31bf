"""KR distance between diffusive and inviscid solutions as kappa shrinks."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("diffusion"))
