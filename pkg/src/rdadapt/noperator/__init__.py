"""DeepONet neural-operator surrogate for the gain kernel."""

from .model import MLP, DeepONetModel, backprop, forward, sensor_values, sigmoid
from .modelio import FORMAT_VERSION, dumps, load_model, loads, save_model
from .training import Adam, TrainConfig, TrainReport, relative_l2, split_by_trajectory, train

__all__ = [
    "MLP", "DeepONetModel", "backprop", "forward", "sensor_values", "sigmoid",
    "FORMAT_VERSION", "dumps", "loads", "save_model", "load_model",
    "Adam", "TrainConfig", "TrainReport", "relative_l2", "split_by_trajectory", "train",
]
