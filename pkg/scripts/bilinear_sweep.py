#!/usr/bin/env python3
"""Frequency-separated product sweep: ratios, tube sandwich, measured constants."""

import sys
from pathlib import Path

from tubeflow.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["bilinear", "--config", str(ROOT / "configs" / "bilinear_sweep.json")]
                  + sys.argv[1:]))
