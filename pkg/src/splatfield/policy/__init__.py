"""Diffusion manipulation policy: schedule, network, training, simulator,
and the observation/rollout machinery tying it to the splat scene."""

from .diffusion import (PolicyObservation, PolicyTrainConfig, denoise_step,
                        forward_noise, invert_forward_noise, sample,
                        train_policy)
from .network import Normalizer, PolicyNet, load_policy, save_policy
from .rollout import (DomainStyle, Observer, SHIFTED_DOMAIN, TRAIN_DOMAIN,
                      evaluate, generate_demos, rollout)
from .schedule import NoiseSchedule, squared_cosine_schedule
from .simulator import SimState, expert_action, make_task, scripted_expert, step, success

__all__ = [
    "PolicyObservation",
    "PolicyTrainConfig",
    "denoise_step",
    "forward_noise",
    "invert_forward_noise",
    "sample",
    "train_policy",
    "Normalizer",
    "PolicyNet",
    "load_policy",
    "save_policy",
    "DomainStyle",
    "Observer",
    "SHIFTED_DOMAIN",
    "TRAIN_DOMAIN",
    "evaluate",
    "generate_demos",
    "rollout",
    "NoiseSchedule",
    "squared_cosine_schedule",
    "SimState",
    "expert_action",
    "make_task",
    "scripted_expert",
    "step",
    "success",
]
