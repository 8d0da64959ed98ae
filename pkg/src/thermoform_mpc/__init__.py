"""Multi-zone sheet heating: physics plant, NARX identification and constrained MPC."""

from .thermal_sim import ConfigError, PlantConfig, ThermalSimulator
from .narx import Dataset, FitConfig, NarxModel, RegressorLayout, fit_narx, linearize
from .mpc import MpcConfig, MpcController
from .excitation import CollectConfig, PrbsSchedule, collect_dataset, generate_prbs
from .experiments import SweepGrid, compute_metrics, robustness_sweep, run_closed_loop

__all__ = [
    "ConfigError", "PlantConfig", "ThermalSimulator", "Dataset", "FitConfig", "NarxModel",
    "RegressorLayout", "fit_narx", "linearize", "MpcConfig", "MpcController", "CollectConfig",
    "PrbsSchedule", "collect_dataset", "generate_prbs", "SweepGrid", "compute_metrics",
    "robustness_sweep", "run_closed_loop",
]
