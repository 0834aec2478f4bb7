#!/usr/bin/env python3
"""Budget-matched method comparison over the candidate-path grid.

Gates on the dominance checks. Add `--checkpoint out/controller.json
--methods best-of-n,rebase,h-uats,a-uats` to include the learned controller.
"""
import sys

from uats.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare", "--check", *sys.argv[1:]]))
