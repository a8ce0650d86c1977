"""Bundle combinatorics, valuation samplers and economic metrics.

Bundles are indexed by bitmask in ascending order: column ``S - 1`` holds
bundle ``S`` and the singleton of item ``j`` is bitmask ``2**j``. Batched
arrays always put the bidder axis before the bundle axis: (batch, n, k).
"""
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from config import Config
from utils.error_handler import GuardError, ValidationError
from utils.logging import setup_logger

logger = setup_logger('auction')

SettingName = Literal['A', 'B', 'C']


def enumerate_bundles(m: int) -> List[int]:
    """All non-empty bundles of ``m`` items as ascending bitmasks"""
    if not 1 <= m <= Config.MAX_ITEMS:
        raise ValidationError(f'Item count must be in [1, {Config.MAX_ITEMS}], got {m}')
    return list(range(1, 2 ** m))


def popcount(mask: int) -> int:
    return bin(mask).count('1')


@dataclass(frozen=True)
class AuctionConfig:
    """n bidders, m items and the canonical order of the k = 2^m - 1 bundles"""
    n: int
    m: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f'Bidder count must be positive, got {self.n}')
        enumerate_bundles(self.m)

    @property
    def k(self) -> int:
        return 2 ** self.m - 1

    @cached_property
    def bundles(self) -> Tuple[int, ...]:
        return tuple(enumerate_bundles(self.m))

    @cached_property
    def bundle_sizes(self) -> np.ndarray:
        return np.array([popcount(s) for s in self.bundles], dtype=np.int64)

    @cached_property
    def incidence(self) -> np.ndarray:
        """(m, k) 0/1 matrix, entry [j, S-1] = 1 iff item j is in bundle S"""
        return np.array([[(s >> j) & 1 for s in self.bundles] for j in range(self.m)],
                        dtype=np.float64)

    @property
    def singleton_columns(self) -> List[int]:
        return [self.column(1 << j) for j in range(self.m)]

    def column(self, bundle: int) -> int:
        if not 1 <= bundle <= self.k:
            raise ValidationError(f'Bundle bitmask {bundle} outside [1, {self.k}]')
        return bundle - 1

    def relabel_columns(self, permutation: Sequence[int]) -> np.ndarray:
        """Column map induced by sending item j to item permutation[j]"""
        if sorted(permutation) != list(range(self.m)):
            raise ValidationError(f'Not a permutation of {self.m} items: {list(permutation)}')
        target = []
        for s in self.bundles:
            image = 0
            for j in range(self.m):
                if (s >> j) & 1:
                    image |= 1 << permutation[j]
            target.append(image - 1)
        return np.array(target, dtype=np.int64)


@dataclass(frozen=True)
class BidderDistribution:
    """Item values U[item_low, item_high]; bundle noise c ~ U[-noise, noise]"""
    item_low: float
    item_high: float
    noise: float = 0.0

    def support(self, config: AuctionConfig) -> Tuple[np.ndarray, np.ndarray]:
        sizes = config.bundle_sizes.astype(np.float64)
        low = np.maximum(sizes * self.item_low - self.noise, 0.0)
        high = sizes * self.item_high + self.noise
        return low, high


def bidder_distributions(setting: SettingName, n: int) -> List[BidderDistribution]:
    if setting == 'A':
        return [BidderDistribution(0.0, 1.0)] * n
    if setting == 'B':
        return [BidderDistribution(1.0, 2.0, 1.0)] * n
    if setting == 'C':
        if n != 2:
            raise ValidationError(f'Setting C is defined for 2 bidders, got n={n}')
        return [BidderDistribution(1.0, 2.0, 1.0), BidderDistribution(1.0, 5.0, 1.0)]
    raise ValidationError(f'Unknown setting: {setting!r}')


@dataclass
class ValuationProfile:
    """A batch of bundle valuations, shape (batch, n, k)"""
    values: np.ndarray
    setting: str
    distributions: List[BidderDistribution]
    item_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValidationError(f'Valuations must be (batch, n, k), got {self.values.shape}')
        if np.any(self.values < 0):
            raise ValidationError('Valuations must be non-negative')

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    def subset(self, index: np.ndarray) -> 'ValuationProfile':
        items = None if self.item_values is None else self.item_values[index]
        return ValuationProfile(self.values[index], self.setting, self.distributions, items)


def sample_profiles(setting: SettingName,
                    config: AuctionConfig,
                    batch: int,
                    rng: np.random.Generator) -> ValuationProfile:
    """Draw v_iS = sum_{j in S} v_ij + c_iS under setting A, B or C"""
    distributions = bidder_distributions(setting, config.n)
    items = np.empty((batch, config.n, config.m))
    for i, dist in enumerate(distributions):
        items[:, i, :] = rng.uniform(dist.item_low, dist.item_high, size=(batch, config.m))
    values = items @ config.incidence
    noise = np.array([d.noise for d in distributions])
    if np.any(noise > 0):
        values = values + rng.uniform(-1.0, 1.0, size=values.shape) * noise[None, :, None]
    return ValuationProfile(values, setting, distributions, items)


def support_bounds(setting: SettingName,
                   config: AuctionConfig,
                   domain: Literal['support', 'nonnegative'] = 'support') -> Tuple[np.ndarray, np.ndarray]:
    """Per-bidder, per-bundle box (low, high), each (n, k), for misreport projection"""
    if domain == 'nonnegative':
        return np.zeros((config.n, config.k)), np.full((config.n, config.k), np.inf)
    bounds = [d.support(config) for d in bidder_distributions(setting, config.n)]
    return np.stack([b[0] for b in bounds]), np.stack([b[1] for b in bounds])


@dataclass
class MechanismOutcome:
    """Allocation (..., n, k) in [0, 1] and payments (..., n)"""
    allocation: np.ndarray
    payments: np.ndarray
    allocation_index: Optional[np.ndarray] = None


def utility(v_i: np.ndarray, z_i: np.ndarray, p_i: float) -> float:
    """Quasi-linear expected utility of one bidder: sum_S z_iS v_iS - p_i"""
    v_i, z_i = np.asarray(v_i, dtype=np.float64), np.asarray(z_i, dtype=np.float64)
    if v_i.shape != z_i.shape:
        raise ValidationError(f'Valuation shape {v_i.shape} != allocation shape {z_i.shape}')
    return float(np.dot(z_i, v_i) - p_i)


def utilities(values: np.ndarray, outcome: MechanismOutcome) -> np.ndarray:
    """Utilities of every bidder, shape (..., n)"""
    return np.sum(outcome.allocation * values, axis=-1) - outcome.payments


def revenue(outcome: MechanismOutcome) -> float:
    """Sum of payments; mean over the batch when payments are batched"""
    payments = np.asarray(outcome.payments)
    if payments.ndim <= 1:
        return float(np.sum(payments))
    return float(np.mean(np.sum(payments, axis=-1)))


@dataclass
class Violation:
    constraint: Literal['item', 'bidder', 'range']
    index: Tuple[int, ...]
    magnitude: float


@dataclass
class FeasibilityReport:
    feasible: bool
    max_violation: float
    violation_count: int
    violations: List[Violation] = field(default_factory=list)


def check_feasibility(allocation: np.ndarray,
                      config: AuctionConfig,
                      tol: float = Config.FEASIBILITY_TOL,
                      max_listed: int = 100) -> FeasibilityReport:
    """Check item (each item at most once), bidder (at most one bundle) and range constraints"""
    z = np.asarray(allocation, dtype=np.float64)
    if z.shape[-2:] != (config.n, config.k):
        raise ValidationError(f'Allocation must end in ({config.n}, {config.k}), got {z.shape}')
    item_mass = np.sum(z, axis=-2) @ config.incidence.T
    bidder_mass = np.sum(z, axis=-1)
    excess = {
        'item': item_mass - 1.0,
        'bidder': bidder_mass - 1.0,
        'range': np.maximum(z - 1.0, -z),
    }
    violations: List[Violation] = []
    count = 0
    worst = 0.0
    for kind, over in excess.items():
        if over.size:
            worst = max(worst, float(np.max(over)))
        bad = np.argwhere(over > tol)
        count += len(bad)
        for idx in bad[: max(0, max_listed - len(violations))]:
            violations.append(Violation(kind, tuple(int(i) for i in idx), float(over[tuple(idx)])))
    return FeasibilityReport(count == 0, max(worst, 0.0), count, violations)


def enumerate_feasible_allocations(config: AuctionConfig) -> np.ndarray:
    """Every deterministic feasible allocation as an (count, n) array of bitmasks (0 = nothing).

    Each item goes to one bidder or nobody, so there are (n+1)^m allocations,
    ordered lexicographically by (bundle of bidder 1, ..., bundle of bidder n);
    the empty allocation comes first.
    """
    if config.n > Config.MAX_ENUM_BIDDERS or config.m > Config.MAX_ENUM_ITEMS:
        raise GuardError(
            f'Enumeration guard: n<={Config.MAX_ENUM_BIDDERS}, m<={Config.MAX_ENUM_ITEMS} '
            f'(got n={config.n}, m={config.m})')
    rows = set()
    for owners in itertools.product(range(config.n + 1), repeat=config.m):
        masks = [0] * config.n
        for item, owner in enumerate(owners):
            if owner:
                masks[owner - 1] |= 1 << item
        rows.add(tuple(masks))
    return np.array(sorted(rows), dtype=np.int64)


def allocation_selection(allocations: np.ndarray, config: AuctionConfig) -> np.ndarray:
    """One-hot (count, n, k) tensor: [a, i, S-1] = 1 iff allocation a gives bundle S to bidder i"""
    selection = np.zeros((len(allocations), config.n, config.k))
    a_idx, bidder = np.nonzero(allocations)
    selection[a_idx, bidder, allocations[a_idx, bidder] - 1] = 1.0
    return selection
