"""Event-driven Moran model simulation and rate-of-adaptation diagnostics."""
from ._backend import BACKEND, available as available_backends
from .engine import (
    Engine,
    Event,
    EventKind,
    LevelHistogram,
    ModelParams,
    RateBundle,
    TrajectorySample,
    centered_variance,
    max_fitness,
    mean_fitness,
    median_level,
    simulate,
    step,
    tag_lineage,
    total_rates,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "available_backends", "Engine", "Event", "EventKind", "LevelHistogram",
    "ModelParams", "RateBundle", "TrajectorySample", "centered_variance", "max_fitness",
    "mean_fitness", "median_level", "simulate", "step", "tag_lineage", "total_rates",
]
