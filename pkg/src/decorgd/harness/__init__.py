"""Training harness: configs, training loop, grid search, curves and demos."""
from .config import RunConfig
from .training import TrainRecord, train, train_run
