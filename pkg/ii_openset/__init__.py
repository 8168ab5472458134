from .config import ExperimentConfig  # noqa: F401
from .interface import Experiment  # noqa: F401
from .io import load_model, save_model  # noqa: F401
from .models import UNKNOWN, Architecture, TrainRegime  # noqa: F401
from .training import train  # noqa: F401
