"""Sequential recommendation with hyperbolic graph attention on the Poincaré ball."""
from .geometry import BallConfig
from .model import ModelConfig, forward, init_params
from .training import TrainConfig, fit

__all__ = ["BallConfig", "ModelConfig", "TrainConfig", "fit", "forward", "init_params"]
__version__ = "0.1.0"
