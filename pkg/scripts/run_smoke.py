#!/usr/bin/env python3
"""Run the bundled smoke experiment (fast end-to-end pipeline check)."""

import sys
from pathlib import Path

from tubeflow.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main(["run", "--config", str(ROOT / "configs" / "smoke.json")]))
