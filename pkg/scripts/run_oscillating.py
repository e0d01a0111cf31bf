"""KR distance of the transported density for u = sin(2 pi k x)/(2 pi k) across k."""

import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("oscillating"))
