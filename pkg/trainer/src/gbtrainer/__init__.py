"""Dataset preparation and booster training for the alert-explanation engine.

Produces train/test CSVs with normalized labels, trains a gradient-boosted
binary classifier, and exports it losslessly to the canonical model JSON
the engine parses.  The export is verified by comparing margins against
the engine's own `predict` command.
"""

from .prepare import PrepareResult, prepare
from .train import TrainSpec, train

__version__ = "0.1.0"

__all__ = ["PrepareResult", "prepare", "TrainSpec", "train", "__version__"]
