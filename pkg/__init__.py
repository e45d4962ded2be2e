"""
diffphy Package

Toolkit for denoising diffusion probabilistic models at the physical layer.

Usage:
    python -m app.cli train-ddpm --out-dir runs/ddpm
    python __main__.py ber-sweep --config receiver.toml
"""

__version__ = "0.1.0"
