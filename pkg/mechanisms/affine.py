"""Affine maximizer auctions (VCG, AMA, VVCA) by brute-force winner determination.

The feasible deterministic allocations of ``enumerate_feasible_allocations``
index the boost table; argmax ties go to the lowest allocation index.
"""
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from core.auction import AuctionConfig, allocation_selection, enumerate_feasible_allocations, popcount
from core.tensor import Tensor
from mechanisms.base import Mechanism, MechanismOutput
from utils.error_handler import ValidationError

FamilyKind = Literal['ama', 'vvca']


@dataclass
class AmaParams:
    """Positive bidder weights and the total boost of every feasible allocation"""
    weights: np.ndarray
    boosts: np.ndarray
    bidder_boosts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.boosts = np.asarray(self.boosts, dtype=np.float64)
        if np.any(self.weights <= 0):
            raise ValidationError(f'AMA weights must be strictly positive, got {self.weights.tolist()}')
        if self.bidder_boosts is not None:
            self.bidder_boosts = np.asarray(self.bidder_boosts, dtype=np.float64)
            if not np.allclose(self.bidder_boosts.sum(axis=0), self.boosts):
                raise ValidationError('Total boosts must equal the sum of bidder-specific boosts')

    @classmethod
    def unit(cls, n: int, num_allocations: int) -> 'AmaParams':
        return cls(np.ones(n), np.zeros(num_allocations))

    @classmethod
    def from_bidder_boosts(cls, weights: np.ndarray, bidder_boosts: np.ndarray) -> 'AmaParams':
        return cls(weights, np.sum(bidder_boosts, axis=0), bidder_boosts)

    def to_dict(self) -> Dict[str, List[float]]:
        data = {'weights': self.weights.tolist(), 'boosts': self.boosts.tolist()}
        if self.bidder_boosts is not None:
            data['bidder_boosts'] = self.bidder_boosts.tolist()
        return data


def bidder_welfare(values: np.ndarray, selection_t: np.ndarray) -> np.ndarray:
    """v_i(a) for every profile, allocation and bidder: (S, A, n)"""
    return np.transpose(np.swapaxes(values, 0, 1) @ selection_t, (1, 2, 0))


def solve_affine(welfare: np.ndarray,
                 weights: np.ndarray,
                 boosts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine winner determination and pivot payments, batched over leading axes.

    Args:
        welfare: (..., S, A, n) bidder values of every allocation
        weights: (..., n) bidder weights
        boosts: (..., A) allocation boosts

    Returns:
        (a_star (..., S), a_minus (..., S, n), payments (..., S, n))
    """
    w = weights[..., None, None, :]
    weighted = welfare * w
    total = weighted.sum(axis=-1) + boosts[..., None, :]
    a_star = np.argmax(total, axis=-1)
    others = total[..., None] - weighted
    a_minus = np.argmax(others, axis=-2)
    pivot = np.take_along_axis(others, a_minus[..., None, :], axis=-2)[..., 0, :]
    current = np.take_along_axis(others, a_star[..., None, None], axis=-2)[..., 0, :]
    return a_star, a_minus, (pivot - current) / w[..., 0, :]


class AffineMaximizer(Mechanism):
    """argmax_a sum_i w_i v_i(a) + λ_a with weighted Clarke pivot payments"""

    kind = 'ama'

    def __init__(self, config: AuctionConfig, params: Optional[AmaParams] = None, kind: str = 'ama'):
        super().__init__(config)
        self.kind = kind
        self.allocations = enumerate_feasible_allocations(config)
        self.selection = allocation_selection(self.allocations, config)
        self.selection_t = np.transpose(self.selection, (1, 2, 0))
        self.params = params or AmaParams.unit(config.n, len(self.allocations))
        if self.params.weights.shape != (config.n,):
            raise ValidationError(f'Expected {config.n} weights, got {self.params.weights.shape}')
        if self.params.boosts.shape != (len(self.allocations),):
            raise ValidationError(
                f'Boost table must have {len(self.allocations)} entries, got {self.params.boosts.shape}')

    @property
    def num_allocations(self) -> int:
        return len(self.allocations)

    def solve(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(a_star (S,), a_minus (S, n), payments (S, n)) for values (S, n, k)"""
        return solve_affine(bidder_welfare(values, self.selection_t), self.params.weights, self.params.boosts)

    def forward(self, bids: Tensor) -> MechanismOutput:
        a_star, a_minus, _ = self.solve(bids.data)
        weights = self.params.weights
        boosts = self.params.boosts
        onehot = np.eye(self.num_allocations)

        welfare = bids.swapaxes(0, 1) @ self.selection_t
        weighted = welfare * weights[:, None, None]
        others = weighted.sum(axis=0, keepdims=True) - weighted
        pivot = (others * onehot[a_minus.T]).sum(axis=-1)
        current = (others * onehot[a_star][None]).sum(axis=-1)
        boost_gap = boosts[a_minus.T] - boosts[a_star][None]
        payments = ((pivot - current + boost_gap) / weights[:, None]).swapaxes(0, 1)
        return MechanismOutput(allocation=Tensor(self.selection[a_star]), payments=payments)

    def describe(self):
        return {**super().describe(), **self.params.to_dict()}


def vcg(config: AuctionConfig) -> AffineMaximizer:
    return AffineMaximizer(config, kind='vcg')


def ama(config: AuctionConfig, params: AmaParams, kind: str = 'ama') -> AffineMaximizer:
    return AffineMaximizer(config, params, kind)


class AffineFamily:
    """Low-dimensional parameterizations of the boost table searched by the baselines.

    ama: one shared boost per class of allocations with the same sorted
    per-bidder bundle-size profile. vvca: bidder-specific boost
    λ_{i,a} = μ_i[|a_i|] for every non-empty bundle size; the allocation
    boost is their sum. Bidder 1's weight is fixed at 1.
    """

    def __init__(self, config: AuctionConfig, kind: FamilyKind = 'ama'):
        if kind not in ('ama', 'vvca'):
            raise ValidationError(f'Unknown affine family: {kind!r}')
        self.config = config
        self.kind = kind
        self.allocations = enumerate_feasible_allocations(config)
        self.sizes = np.vectorize(popcount)(self.allocations).astype(np.int64)
        if kind == 'ama':
            profiles = [tuple(sorted(row)) for row in self.sizes.tolist()]
            self.class_labels = sorted(set(profiles))
            self.class_index = np.array([self.class_labels.index(p) for p in profiles], dtype=np.int64)
            self.boost_dim = len(self.class_labels)
        else:
            self.boost_dim = config.n * config.m

    @property
    def weight_dim(self) -> int:
        return self.config.n - 1

    @property
    def dim(self) -> int:
        return self.weight_dim + self.boost_dim

    def initial_vector(self) -> np.ndarray:
        """Unit weights, zero boosts: the VCG point"""
        return np.concatenate([np.ones(self.weight_dim), np.zeros(self.boost_dim)])

    def weights(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        return np.concatenate([np.ones((len(vectors), 1)), vectors[:, :self.weight_dim]], axis=1)

    def bidder_boosts(self, vectors: np.ndarray) -> np.ndarray:
        """(P, n, A) bidder-specific boosts of the vvca family"""
        vectors = np.atleast_2d(vectors)
        mu = vectors[:, self.weight_dim:].reshape(len(vectors), self.config.n, self.config.m)
        padded = np.concatenate([np.zeros((len(vectors), self.config.n, 1)), mu], axis=2)
        bidder = np.arange(self.config.n)[None, :]
        return np.transpose(padded[:, bidder, self.sizes], (0, 2, 1))

    def boosts(self, vectors: np.ndarray) -> np.ndarray:
        """(P, A) total boost of every allocation"""
        vectors = np.atleast_2d(vectors)
        block = vectors[:, self.weight_dim:]
        if self.kind == 'ama':
            return block[:, self.class_index]
        return self.bidder_boosts(vectors).sum(axis=1)

    def params(self, vector: np.ndarray) -> AmaParams:
        weights = self.weights(vector)[0]
        if self.kind == 'vvca':
            return AmaParams.from_bidder_boosts(weights, self.bidder_boosts(vector)[0])
        return AmaParams(weights, self.boosts(vector)[0])

    def mechanism(self, vector: np.ndarray, kind: Optional[str] = None) -> AffineMaximizer:
        return AffineMaximizer(self.config, self.params(vector), kind or self.kind)
