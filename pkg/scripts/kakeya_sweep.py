#!/usr/bin/env python3
"""Transverse tube-family overlap sweep: ratio growth against the box radius."""

import sys
from pathlib import Path

from tubeflow.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["kakeya", "--config", str(ROOT / "configs" / "kakeya_sweep.json")]
                  + sys.argv[1:]))
