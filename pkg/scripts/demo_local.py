#!/usr/bin/env python3
"""Boot the live demo stack (real sockets, real shell scripts) and keep
it running until Ctrl-C.  See README for the matching CLI calls."""

from edgeorc.demo import main

if __name__ == "__main__":
    main()
