"""Latent action diffusion scheduling for edge AIGC workloads."""

from .harness import ExperimentConfig, load_config, run_training, sweep
from .sac import Hyperparams
from .sim import ConfigError, EdgeEnv, EnvConfig

__all__ = ["ConfigError", "EdgeEnv", "EnvConfig", "ExperimentConfig", "Hyperparams",
           "load_config", "run_training", "sweep"]
__version__ = "0.1.0"
