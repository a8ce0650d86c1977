from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core.auction import AuctionConfig, MechanismOutcome
from core.feasibility import AllocationLogits, FeasibleAllocation, MaskMode, feasible_allocation
from core.layers import Module
from core.tensor import Tensor
from utils.error_handler import ShapeError, ValidationError
from utils.logging import logger


@dataclass
class MechanismOutput:
    """Differentiable outcome of one forward pass: Z (batch, n, k), payments (batch, n)"""
    allocation: Tensor
    payments: Tensor
    feasible: Optional[FeasibleAllocation] = None
    pricing: Optional[Tensor] = None

    def outcome(self) -> MechanismOutcome:
        return MechanismOutcome(self.allocation.data, self.payments.data)


def price(pricing: Tensor, allocation: Tensor, bids: Tensor) -> Tensor:
    """p_i = p̃_i * sum_S Z_iS b_iS"""
    return pricing * (allocation * bids).sum(axis=-1)


class Mechanism(ABC):
    """Base class for every auction mechanism.

    Subclasses map a batch of bids (batch, n, k) to a differentiable
    allocation and payment pair.
    """

    kind: str = 'mechanism'

    def __init__(self, config: AuctionConfig):
        self.config = config
        self.logger = logger

    @abstractmethod
    def forward(self, bids: Tensor) -> MechanismOutput:
        """Run the mechanism on a bid batch

        Args:
            bids: Tensor of shape (batch, n, k)

        Returns:
            MechanismOutput with allocation (batch, n, k) and payments (batch, n)
        """
        pass

    def __call__(self, bids: Union[Tensor, np.ndarray]) -> MechanismOutput:
        bids = bids if isinstance(bids, Tensor) else Tensor(bids)
        self.check_bids(bids)
        return self.forward(bids)

    def check_bids(self, bids: Tensor) -> None:
        if bids.ndim != 3 or bids.shape[1:] != (self.config.n, self.config.k):
            raise ShapeError(self.kind, [bids.shape, (self.config.n, self.config.k)],
                             'bids must be (batch, n, k)')
        if np.any(bids.data < 0):
            raise ValidationError('Bids must be non-negative')

    def outcome(self, values: np.ndarray) -> MechanismOutcome:
        """Numpy outcome without gradient tracking"""
        values = np.asarray(values, dtype=np.float64)
        squeeze = values.ndim == 2
        out = self(Tensor(values[None] if squeeze else values)).outcome()
        if squeeze:
            return MechanismOutcome(out.allocation[0], out.payments[0])
        return out

    def parameters(self) -> List[Tensor]:
        return []

    def requires_grad_(self, flag: bool) -> 'Mechanism':
        return self

    def describe(self) -> Dict[str, Any]:
        return {'type': self.kind, 'n': self.config.n, 'm': self.config.m}


class NeuralMechanism(Module, Mechanism):
    """A network producing allocation logits and pricing fractions"""

    def __init__(self, config: AuctionConfig, theta: float = 10.0, mask_mode: MaskMode = 'masked'):
        Module.__init__(self)
        Mechanism.__init__(self, config)
        if theta <= 0:
            raise ValidationError(f'theta must be positive, got {theta}')
        self.theta = float(theta)
        self.mask_mode = mask_mode

    @abstractmethod
    def logits(self, bids: Tensor) -> Tuple[AllocationLogits, Tensor]:
        """Allocation logits (A, A', B) and pricing fractions p̃ of shape (batch, n)"""
        pass

    def forward(self, bids: Tensor) -> MechanismOutput:
        logits, pricing = self.logits(bids)
        feasible = feasible_allocation(logits, self.config, self.mask_mode)
        return MechanismOutput(
            allocation=feasible.Z,
            payments=price(pricing, feasible.Z, bids),
            feasible=feasible,
            pricing=pricing,
        )

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'theta': self.theta, 'mask_mode': self.mask_mode}
