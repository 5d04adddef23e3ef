"""Hand-tuned derivative costs along column intensity profiles.

Bone rewards the strongest dark-to-bright step traversing the column from
inside outwards; cartilage rewards bright-to-dark transitions, mixing first
and second derivatives so a shallow dip inside the bright plateau does not
masquerade as the outer edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class GradientCostParams:
    kernel_half_width: int = 1
    w1: float = 0.7          # first-derivative weight (cartilage)
    w2: float = 0.3          # second-derivative weight (cartilage)

    def __post_init__(self):
        if self.kernel_half_width < 1:
            raise CostError("kernel half-width must be >= 1")
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise CostError("weights must be non-negative with w1 + w2 > 0")


def _d1(profile: np.ndarray, half: int) -> np.ndarray:
    """Central difference over +-half nodes, inside-to-outside orientation."""
    k = np.arange(len(profile))
    up = np.clip(k + half, 0, len(profile) - 1)
    dn = np.clip(k - half, 0, len(profile) - 1)
    return (profile[up] - profile[dn]) / (2.0 * half)


def _d2(profile: np.ndarray, half: int) -> np.ndarray:
    k = np.arange(len(profile))
    up = np.clip(k + half, 0, len(profile) - 1)
    dn = np.clip(k - half, 0, len(profile) - 1)
    return (profile[up] - 2.0 * profile[k] + profile[dn]) / (half * half)


def bone_cost(profile, params: GradientCostParams = GradientCostParams()) -> np.ndarray:
    """Costs favoring the strongest dark-to-bright edge (rising derivative)."""
    profile = np.asarray(profile, dtype=np.float64)
    if len(profile) < 3:
        raise CostError("bone cost needs at least 3 nodes")
    score = np.maximum(0.0, _d1(profile, params.kernel_half_width))
    c = float(score.max())
    cost = c - score
    cost[0] = c
    cost[-1] = c
    return cost


def cartilage_cost(profile, params: GradientCostParams = GradientCostParams()) -> np.ndarray:
    """Costs favoring the outer bright-to-dark edge.

    score = w1 * relu(-D1) + w2 * relu(-D2); the second derivative term
    penalizes in-plateau dips, which curve opposite to a true plateau exit.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if len(profile) < 5:
        raise CostError("cartilage cost needs at least 5 nodes")
    half = params.kernel_half_width
    score = (params.w1 * np.maximum(0.0, -_d1(profile, half))
             + params.w2 * np.maximum(0.0, -_d2(profile, half)))
    c = float(score.max())
    cost = c - score
    cost[0] = c
    cost[-1] = c
    return cost


def bone_cost_stack(profiles, params: GradientCostParams = GradientCostParams()) -> np.ndarray:
    """Vectorized :func:`bone_cost` over (n_columns, K) profiles."""
    return np.vstack([bone_cost(p, params) for p in np.atleast_2d(profiles)])


def cartilage_cost_stack(profiles, params: GradientCostParams = GradientCostParams()) -> np.ndarray:
    return np.vstack([cartilage_cost(p, params) for p in np.atleast_2d(profiles)])
