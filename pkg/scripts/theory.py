#!/usr/bin/env python3
"""Run both chain scenarios over the horizon grid and gate on the checks.

Defaults reproduce the headline degradation curves; pass CLI flags to vary
(see `python3 -m uats theory --help`).
"""
import sys

from uats.cli import main

if __name__ == "__main__":
    sys.exit(main(["theory", "--check", *sys.argv[1:]]))
