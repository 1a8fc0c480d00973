"""Entropy-regularized policy optimization over tabular sequence models."""

from .algorithms import PRESET_NAMES, AnnealSchedule, InterpConfig, MixtureWeights, interp_train, preset_config
from .core import ContractError, Example, Vocab
from .erpo import ErpoConfig, erpo_objective, erpo_train, exact_q, m_step_grad
from .policy import Policy, init_policy, load_checkpoint, log_prob_seq, save_checkpoint
from .rewards import DELTA, HAMMING, RewardSpec, reward

__version__ = "0.1.0"

__all__ = [
    "PRESET_NAMES",
    "AnnealSchedule",
    "InterpConfig",
    "MixtureWeights",
    "interp_train",
    "preset_config",
    "ContractError",
    "Example",
    "Vocab",
    "ErpoConfig",
    "erpo_objective",
    "erpo_train",
    "exact_q",
    "m_step_grad",
    "Policy",
    "init_policy",
    "load_checkpoint",
    "log_prob_seq",
    "save_checkpoint",
    "DELTA",
    "HAMMING",
    "RewardSpec",
    "reward",
]
