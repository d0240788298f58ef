"""The defender: MLP policy, GRPO and PPO."""
from .batch import Batch
from .grpo import GrpoConfig, grpo_advantages, grpo_loss_grad, grpo_update, group_batch
from .optim import Adam
from .policy import N_PARAMS, NetPolicy, init_params, policy_forward
from .ppo import PpoConfig, episode_batch, gae, ppo_loss_grad, ppo_update
