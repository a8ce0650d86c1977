"""Differentiable layer that turns allocation logits into a combinatorially feasible Z.

All functions accept an optional leading batch axis: A and A' are (..., n, k),
B is (..., m, k).
"""
import json
from dataclasses import dataclass
from typing import Any, Dict, Literal

import numpy as np

from config import Config
from core.auction import AuctionConfig
from core.tensor import Tensor, masked_fill, minimum, softmax
from utils.error_handler import ShapeError, ValidationError

MaskMode = Literal['masked', 'unmasked']


@dataclass
class AllocationLogits:
    agent: Tensor
    bundle: Tensor
    item: Tensor
    theta: float

    def validate(self, config: AuctionConfig) -> None:
        if self.theta <= 0:
            raise ValidationError(f'Softmax temperature must be positive, got {self.theta}')
        expected = {'agent': (config.n, config.k), 'bundle': (config.n, config.k),
                    'item': (config.m, config.k)}
        for name, shape in expected.items():
            tensor = getattr(self, name)
            if tensor.shape[-2:] != shape:
                raise ShapeError('allocation_logits', [tensor.shape, shape], f'{name} head')
            if not np.all(np.isfinite(tensor.data)):
                raise ValidationError(f'Non-finite entries in the {name} logits')


@dataclass
class FeasibleAllocation:
    """Z and the intermediates it was built from"""
    Z: Tensor
    item_scores: Tensor
    item_scores_masked: Tensor
    availability: Tensor
    agent_bundle: Tensor

    def to_dict(self, index: int = 0) -> Dict[str, Any]:
        """Plain lists for one profile of the batch (diagnostic dumps)"""
        def pick(t: Tensor) -> list:
            data = t.data if t.ndim == 2 else t.data[index]
            return np.where(np.abs(data) >= Config.SENTINEL, None, data).tolist()
        return {
            'Z': pick(self.Z),
            'B_adjusted': pick(self.item_scores),
            'B_masked': pick(self.item_scores_masked),
            'b_bundle': pick(self.availability),
            'A_agent_bundle': pick(self.agent_bundle),
        }

    def dump(self, path: str, index: int = 0) -> None:
        with open(path, 'w') as f:
            json.dump(self.to_dict(index), f, indent=2)


def item_bundle_scores(B: Tensor,
                       incidence: np.ndarray,
                       theta: float,
                       mask_mode: MaskMode = 'masked') -> Tensor:
    """Per item, softmax over the bundles that contain it (or over all bundles when unmasked)"""
    if B.shape[-2:] != incidence.shape:
        raise ShapeError('item_bundle_scores', [B.shape, incidence.shape])
    if not np.all(incidence.any(axis=-1)):
        raise ValidationError('Every item must belong to at least one bundle')
    mask = incidence if mask_mode == 'masked' else None
    return softmax(B, axis=-1, temperature=theta, mask=mask)


def mask_item_scores(B_adjusted: Tensor,
                     incidence: np.ndarray,
                     sentinel: float = Config.SENTINEL) -> Tensor:
    return masked_fill(B_adjusted, incidence == 0, sentinel)


def bundle_availability(B_adjusted: Tensor,
                        incidence: np.ndarray,
                        sentinel: float = Config.SENTINEL) -> Tensor:
    """b_bundle[S] = min over items j in S of B_adjusted[j, S], shaped (..., 1, k)"""
    return mask_item_scores(B_adjusted, incidence, sentinel).min(axis=-2, keepdims=True)


def agent_bundle_scores(A: Tensor, A_prime: Tensor, theta: float) -> Tensor:
    """min(softmax over agents of A, softmax over bundles of A')"""
    if A.shape != A_prime.shape:
        raise ShapeError('agent_bundle_scores', [A.shape, A_prime.shape])
    return minimum(softmax(A, axis=-2, temperature=theta),
                   softmax(A_prime, axis=-1, temperature=theta))


def compose_allocation(b_bundle: Tensor, A_agent_bundle: Tensor) -> Tensor:
    """Z = b_bundle broadcast over agents, times A_agent_bundle elementwise"""
    if b_bundle.shape[-1] != A_agent_bundle.shape[-1]:
        raise ShapeError('compose_allocation', [b_bundle.shape, A_agent_bundle.shape])
    return b_bundle * A_agent_bundle


def feasible_allocation(logits: AllocationLogits,
                        config: AuctionConfig,
                        mask_mode: MaskMode = 'masked',
                        sentinel: float = Config.SENTINEL) -> FeasibleAllocation:
    logits.validate(config)
    incidence = config.incidence
    scores = item_bundle_scores(logits.item, incidence, logits.theta, mask_mode)
    masked = mask_item_scores(scores, incidence, sentinel)
    availability = bundle_availability(scores, incidence, sentinel)
    agent_bundle = agent_bundle_scores(logits.agent, logits.bundle, logits.theta)
    return FeasibleAllocation(
        Z=compose_allocation(availability, agent_bundle),
        item_scores=scores,
        item_scores_masked=masked,
        availability=availability,
        agent_bundle=agent_bundle,
    )
