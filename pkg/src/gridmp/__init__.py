"""Graph models for distribution-grid state estimation, built on a small numpy autodiff core."""
from .grid import Branch, Bus, Grid, build_synthetic_grid, generate_switching_scenario, load_grid, save_grid
from .powerflow import PowerFlowSolution, solve_power_flow
from .dataset import Dataset, build_dataset, load_dataset, save_dataset
from .models import MODEL_KINDS, ModelConfig, build_model

__version__ = "0.1.0"
