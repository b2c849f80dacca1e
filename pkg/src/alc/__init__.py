"""Physical-activity intensity classification from wearable IMU windows."""

from .pamap2_io import IntensityLevel, MetTable, activity_to_level, met_to_level
from .preprocess import SensorConfig, WindowSet
from .model_zoo import ModelKind, ModelSpec, build
from .train_eval import Hyperparams, evaluate, run_experiment, train
from .stats import bonferroni, wilcoxon_signed_rank

__version__ = "0.1.0"
