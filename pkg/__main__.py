"""
diffphy - Entry Point

Runs the command-line interface from the repository root.

Usage:
    python __main__.py train-ddpm --out-dir runs/demo
    python __main__.py train-baseline --out-dir runs/demo
    python __main__.py ber-sweep --out-dir runs/demo \
        --checkpoint runs/demo/ddpm.ckpt --baseline-checkpoint runs/demo/baseline.ckpt
    python __main__.py --help
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
