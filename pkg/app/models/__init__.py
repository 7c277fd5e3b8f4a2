# package marker for app.models

# Import all models so they are registered on the metadata
from app.models.experiment_runs import ExperimentRun, SeedRun

__all__ = [
    "ExperimentRun",
    "SeedRun",
]
