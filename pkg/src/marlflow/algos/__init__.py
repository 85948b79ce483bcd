"""Algorithm suite: nine learners over three dataflow categories."""
from .actor_critic import ActorCritic, ActorCriticPolicy
from .base import CATEGORIES, POSTPROCESS, AlgoConfig, Algorithm
from .core import (centralized_critic_loss, coma_advantage, entropy, epsilon_greedy, masked_argmax,
                   masked_softmax, one_hot, pg_actor_loss, ppo_surrogate, ppo_surrogate_grad, q_target, vdn_mix)
from .mixers import MonotonicMixer, SumMixer, make_mixer, qmix_mix, vda2c_mixed_value
from .qlearning import QLearning, QPolicy, iql_update, td_loss_and_grads, vd_q_update

ALGORITHMS = {
    "iql": QLearning, "vdn": QLearning, "qmix": QLearning,
    "ia2c": ActorCritic, "ippo": ActorCritic, "maa2c": ActorCritic, "mappo": ActorCritic,
    "coma": ActorCritic, "vda2c": ActorCritic,
}


def make_algorithm(cfg: AlgoConfig, spec, policy_map, hidden=(64, 64), seed=0, model_kind="mlp", **kwargs):
    cfg.validate()
    return ALGORITHMS[cfg.name](cfg, spec, policy_map, hidden=hidden, seed=seed, model_kind=model_kind, **kwargs)
