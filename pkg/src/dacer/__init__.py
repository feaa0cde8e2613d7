"""Diffusion actor-critic with a GMM-entropy regulated exploration noise."""
from .critic import CriticPair, bellman_target, critic_loss, soft_update
from .diffusion import DiffusionPolicy, make_schedule, policy_loss
from .entropy import AlphaState, em_fit, estimate_policy_entropy, gmm_entropy, update_alpha
from .trainer import ReplayBuffer, TrainConfig, Trainer, train

__version__ = "0.1.0"
