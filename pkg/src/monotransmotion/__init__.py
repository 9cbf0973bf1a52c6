"""Monocular pedestrian localization from 2D pose keypoints and BEV trajectory
prediction, built on a small numpy autodiff engine."""
from . import geometry, kalman, losses, metrics, models, synthdata, training

__version__ = "0.1.0"

__all__ = ["geometry", "kalman", "losses", "metrics", "models", "synthdata", "training", "__version__"]
