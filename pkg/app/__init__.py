"""
diffphy
Denoising diffusion models for physical-layer simulation: a DDPM receiver
for hardware-impaired links and DDPM-driven constellation shaping, each
benchmarked against a supervised DNN demapper.
"""

__version__ = "0.1.0"
