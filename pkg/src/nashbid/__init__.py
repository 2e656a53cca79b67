from .__version__ import __version__, __config_version__
from .bpg import TrainResult, bpg_train, unified_solution_ratios
from .baselines import TRAINERS
from .config import load_config
from .exploitability import compliance_rate, max_exploitability, train_best_response
from .models import ExperimentConfig, MarketConfig, TrainConfig, ValueModel
from .policy import PolicyArch, PolicyParams
