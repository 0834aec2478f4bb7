#!/usr/bin/env python3
"""Train the adaptive controller on the environment mixture, save the
checkpoint and training log, and gate on the no-regression checks."""
import sys

from uats.cli import main

if __name__ == "__main__":
    sys.exit(main(["train-controller", "--check", *sys.argv[1:]]))
