"""Group-relative advantage math and the clipped surrogate objective.

Advantages are per-group z-scores of rewards (population standard
deviation, no Bessel correction) with a zero-variance guard: a group of
identical rewards gets all-zero advantages instead of NaNs. The surrogate
is the usual clipped-ratio min; advantages are per-response scalars
broadcast over that response's tokens. No KL term, no optimizer - this is
the scalar arithmetic a training loop consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import GroupTooSmall, ShapeMismatch

DEFAULT_STD_EPS = 1e-6
DEFAULT_CLIP_EPS = 0.2
DEFAULT_GROUP_SIZE = 8

_MAX_LOG_RATIO = 709.0  # exp() overflows just above this


@dataclass(frozen=True)
class RolloutGroup:
    rewards: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(r) for r in self.rewards)
        if any(not math.isfinite(r) for r in vals):
            raise ValueError("rewards must be finite")
        object.__setattr__(self, "rewards", vals)

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class AdvantageSet:
    advantages: tuple[float, ...]
    mean_reward: float
    std_reward: float


def group_advantages(group: RolloutGroup, eps: float = DEFAULT_STD_EPS) -> AdvantageSet:
    """Per-reward z-scores within the group; all zeros when std <= eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = len(group)
    if g < 2:
        raise GroupTooSmall(f"need at least 2 rewards per group, got {g}")
    mean = sum(group.rewards) / g
    var = sum((r - mean) ** 2 for r in group.rewards) / g
    std = math.sqrt(var)
    if std <= eps:
        advantages = (0.0,) * g
    else:
        advantages = tuple((r - mean) / std for r in group.rewards)
    return AdvantageSet(advantages=advantages, mean_reward=mean, std_reward=std)


def prob_ratio(logp_new: float, logp_old: float) -> float:
    """exp(logp_new - logp_old), capped so extreme gaps stay finite."""
    if not (math.isfinite(logp_new) and math.isfinite(logp_old)):
        raise ValueError("log-probabilities must be finite")
    return math.exp(min(logp_new - logp_old, _MAX_LOG_RATIO))


def clipped_surrogate(ratio: float, advantage: float, eps_clip: float = DEFAULT_CLIP_EPS) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    if ratio <= 0:
        raise ValueError("probability ratio must be positive")
    if not 0.0 < eps_clip < 1.0:
        raise ValueError("eps_clip must lie in (0, 1)")
    clipped = min(max(ratio, 1.0 - eps_clip), 1.0 + eps_clip)
    return min(ratio * advantage, clipped * advantage)


def batch_surrogate(
    groups: Sequence[RolloutGroup],
    ratios: Sequence[Sequence[Sequence[float]]],
    eps_clip: float = DEFAULT_CLIP_EPS,
    std_eps: float = DEFAULT_STD_EPS,
) -> float:
    """Objective value over a batch of groups.

    ``ratios[g][i]`` is the token-ratio list for response i of group g; the
    group's advantage for response i multiplies every one of its tokens.
    Token averages are taken per response, then per group, then across
    groups.
    """
    if not groups:
        raise ShapeMismatch("need at least one group")
    if len(ratios) != len(groups):
        raise ShapeMismatch(f"{len(groups)} groups but {len(ratios)} ratio groups")
    total = 0.0
    for gi, (group, group_ratios) in enumerate(zip(groups, ratios)):
        if len(group_ratios) != len(group):
            raise ShapeMismatch(
                f"group {gi}: {len(group)} rewards but {len(group_ratios)} responses"
            )
        adv = group_advantages(group, eps=std_eps).advantages
        group_value = 0.0
        for ri, token_ratios in enumerate(group_ratios):
            if len(token_ratios) == 0:
                raise ShapeMismatch(f"group {gi} response {ri} has no tokens")
            token_sum = sum(clipped_surrogate(r, adv[ri], eps_clip) for r in token_ratios)
            group_value += token_sum / len(token_ratios)
        total += group_value / len(group)
    return total / len(groups)
