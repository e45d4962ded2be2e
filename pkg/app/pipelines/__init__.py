"""
diffphy - Pipelines Module

End-to-end experiments built on the neuralnet, diffusion and comms modules.

Each pipeline module provides:
- Training or sweep logic for one experiment
- Deterministic per-cell RNG streams derived from the master seed
- A ResultTable carrying provenance (seed, model checksums)
"""

from app.pipelines.baseline import BaselineDnn, train_dnn_baseline
from app.pipelines.ddpm import build_diffusion_model, train_ddpm_on_constellation
from app.pipelines.receiver import run_receiver_ber_sweep
from app.pipelines.shaping import (
    ShapedDistribution,
    measure_mutual_information,
    run_mi_sweep,
    run_shaping,
    shape_constellation,
)

__all__ = [
    "BaselineDnn",
    "train_dnn_baseline",
    "build_diffusion_model",
    "train_ddpm_on_constellation",
    "run_receiver_ber_sweep",
    "ShapedDistribution",
    "measure_mutual_information",
    "run_mi_sweep",
    "run_shaping",
    "shape_constellation",
]
