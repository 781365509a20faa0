"""Simulated-annealing and tabu-search tuning of boosted trees for ED LBTC prediction."""
from .annealer import AnnealerConfig, OptimizationResult, optimize
from .gbt import BoostedEnsemble, GbtHyperparams, train
from .param_space import ParamSpace, ParamSpec, Solution, default_space

__version__ = "0.1.0"

__all__ = [
    "AnnealerConfig", "OptimizationResult", "optimize",
    "BoostedEnsemble", "GbtHyperparams", "train",
    "ParamSpace", "ParamSpec", "Solution", "default_space",
]
