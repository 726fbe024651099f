"""Equivariant 4D mmWave radar odometry: Doppler preprocessing, velocity-aware
graphs, an equivariant feature network, and Sinkhorn/SVD registration."""

from .config import PipelineConfig, init_params
from .matching import PipelineParams, register_pair
from .radar_cloud import RadarFrame, Sequence
from .se3 import RelativePose

__all__ = ["PipelineConfig", "PipelineParams", "RadarFrame", "RelativePose", "Sequence",
           "init_params", "register_pair"]
__version__ = "0.1.0"
