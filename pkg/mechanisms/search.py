from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import Config
from core.auction import AuctionConfig, SettingName, sample_profiles
from mechanisms.affine import AffineFamily, AffineMaximizer, AmaParams, FamilyKind, bidder_welfare, solve_affine
from utils.error_handler import GuardError
from utils.logging import setup_logger

logger = setup_logger('search')

# Upper bound on welfare entries materialized per vectorized chunk
CHUNK_BUDGET = 4_000_000


class GridSpec(BaseModel):
    """Weight values for bidders 2..n and an evenly spaced boost range"""

    model_config = ConfigDict(extra='forbid')

    weights: List[float] = Field(default_factory=lambda: [0.5, 0.75, 1.0, 1.25, 1.5])
    boost_min: float = Field(0.0, ge=0)
    boost_max: float = Field(2.0, ge=0)
    boost_step: float = Field(0.1, gt=0)
    max_points: int = Field(2_000_000, ge=1)

    @model_validator(mode='after')
    def _check(self) -> 'GridSpec':
        if not self.weights or min(self.weights) <= 0:
            raise ValueError('grid weights must be non-empty and strictly positive')
        if self.boost_max < self.boost_min:
            raise ValueError('boost_max must be >= boost_min')
        return self

    def boost_values(self) -> np.ndarray:
        count = int(np.floor((self.boost_max - self.boost_min) / self.boost_step + 1e-9)) + 1
        return np.round(self.boost_min + self.boost_step * np.arange(count), 10)


@dataclass
class SearchResult:
    kind: str
    params: AmaParams
    vector: np.ndarray
    train_revenue: float
    eval_revenue: Optional[float] = None
    evaluated_points: int = 0
    restart_revenues: List[float] = field(default_factory=list)
    restart_eval_revenues: List[float] = field(default_factory=list)

    def mechanism(self, config: AuctionConfig) -> AffineMaximizer:
        return AffineMaximizer(config, self.params, self.kind)

    def eval_summary(self) -> Dict[str, float]:
        """Mean and best held-out revenue over restarts"""
        if not self.restart_eval_revenues:
            return {}
        return {
            'restart_eval_revenue_mean': float(np.mean(self.restart_eval_revenues)),
            'restart_eval_revenue_best': float(np.max(self.restart_eval_revenues)),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'params': self.params.to_dict(),
            'vector': self.vector.tolist(),
            'train_revenue': self.train_revenue,
            'eval_revenue': self.eval_revenue,
            'evaluated_points': self.evaluated_points,
            'restart_revenues': self.restart_revenues,
            'restart_eval_revenues': self.restart_eval_revenues,
        }


def family_revenue(family: AffineFamily, welfare: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Mean revenue on fixed samples for each parameter vector, shape (P,)"""
    vectors = np.atleast_2d(vectors)
    per_point = welfare.size
    chunk = max(1, CHUNK_BUDGET // max(per_point, 1))
    revenues = np.empty(len(vectors))
    for start in range(0, len(vectors), chunk):
        block = vectors[start:start + chunk]
        _, _, payments = solve_affine(welfare, family.weights(block), family.boosts(block))
        revenues[start:start + chunk] = payments.sum(axis=-1).mean(axis=-1)
    return revenues


def monte_carlo_revenue(mechanism: AffineMaximizer,
                        setting: SettingName,
                        samples: int,
                        rng: np.random.Generator,
                        chunk_size: int = 20_000) -> float:
    """Mean revenue over ``samples`` fresh profiles, drawn and solved chunk by chunk"""
    total = 0.0
    remaining = samples
    while remaining > 0:
        batch = min(chunk_size, remaining)
        values = sample_profiles(setting, mechanism.config, batch, rng).values
        _, _, payments = mechanism.solve(values)
        total += float(payments.sum())
        remaining -= batch
    return total / samples


def grid_search_ama(setting: SettingName,
                    config: AuctionConfig,
                    grid: GridSpec,
                    train_values: np.ndarray,
                    kind: FamilyKind = 'ama',
                    eval_samples: int = 0,
                    rng: Optional[np.random.Generator] = None) -> SearchResult:
    """Exhaustive search over the weight x boost grid; best train revenue wins (first on ties)"""
    family = AffineFamily(config, kind)
    weight_axis = np.asarray(grid.weights, dtype=np.float64)
    boost_axis = grid.boost_values()
    axes = [weight_axis] * family.weight_dim + [boost_axis] * family.boost_dim
    shape = tuple(len(a) for a in axes)
    points = int(np.prod(shape, dtype=np.float64))
    if points > grid.max_points:
        raise GuardError(f'Grid has {points} points, guard is {grid.max_points}; '
                         f'reduce the grid or use local search')
    logger.info(f'Grid search ({kind}) over {points} points on {len(train_values)} profiles')

    welfare = bidder_welfare(train_values, AffineMaximizer(config).selection_t)
    chunk = max(1, CHUNK_BUDGET // welfare.size)
    best_revenue = -np.inf
    best_vector = family.initial_vector()
    for start in range(0, points, chunk):
        flat = np.arange(start, min(points, start + chunk))
        index = np.unravel_index(flat, shape)
        vectors = np.stack([axis[i] for axis, i in zip(axes, index)], axis=1)
        revenues = family_revenue(family, welfare, vectors)
        j = int(np.argmax(revenues))
        if revenues[j] > best_revenue:
            best_revenue = float(revenues[j])
            best_vector = vectors[j]

    result = SearchResult(kind, family.params(best_vector), best_vector, best_revenue, evaluated_points=points)
    if eval_samples:
        result.eval_revenue = monte_carlo_revenue(result.mechanism(config), setting, eval_samples,
                                                  rng or np.random.default_rng(Config.SEED))
    logger.info(f'Grid search best train revenue {best_revenue:.4f}')
    return result


def hill_climb(family: AffineFamily,
               welfare: np.ndarray,
               start: np.ndarray,
               initial_step: float = 0.5,
               min_step: float = 0.01,
               max_rounds: int = 500,
               min_weight: float = 0.05) -> Tuple[np.ndarray, float, int]:
    """Move to the best improving +/- step along any coordinate; halve the step when stuck"""
    vector = start.copy()
    best = float(family_revenue(family, welfare, vector)[0])
    step = initial_step
    evaluated = 1
    lower = np.concatenate([np.full(family.weight_dim, min_weight), np.zeros(family.boost_dim)])
    for _ in range(max_rounds):
        if step < min_step:
            break
        moves = np.concatenate([np.eye(family.dim), -np.eye(family.dim)]) * step
        candidates = np.maximum(vector[None, :] + moves, lower)
        revenues = family_revenue(family, welfare, candidates)
        evaluated += len(candidates)
        j = int(np.argmax(revenues))
        if revenues[j] > best + 1e-12:
            vector, best = candidates[j], float(revenues[j])
        else:
            step /= 2
    return vector, best, evaluated


def local_search_ama(setting: SettingName,
                     config: AuctionConfig,
                     train_values: np.ndarray,
                     kind: FamilyKind = 'ama',
                     restarts: int = 10,
                     seed: int = Config.SEED,
                     eval_samples: int = 0,
                     rng: Optional[np.random.Generator] = None,
                     workers: int = 1) -> SearchResult:
    """Coordinate hill climbing from the VCG point plus ``restarts - 1`` random starts"""
    family = AffineFamily(config, kind)
    welfare = bidder_welfare(train_values, AffineMaximizer(config).selection_t)
    starts = [family.initial_vector()]
    for child in np.random.SeedSequence(seed).spawn(max(restarts - 1, 0)):
        start_rng = np.random.default_rng(child)
        starts.append(np.concatenate([
            start_rng.uniform(0.5, 1.5, size=family.weight_dim),
            start_rng.uniform(0.0, 1.0, size=family.boost_dim),
        ]))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        runs = list(pool.map(lambda s: hill_climb(family, welfare, s), starts))

    revenues = [r[1] for r in runs]
    best = int(np.argmax(revenues))
    vector = runs[best][0]
    result = SearchResult(kind, family.params(vector), vector, revenues[best],
                          evaluated_points=sum(r[2] for r in runs), restart_revenues=revenues)
    logger.info(f'Local search ({kind}): best train revenue {revenues[best]:.4f} '
                f'over {len(starts)} restarts, mean {np.mean(revenues):.4f}')
    if eval_samples:
        # every restart sees the same held-out profiles
        eval_seed = int((rng or np.random.default_rng(Config.SEED)).integers(2 ** 63))
        result.restart_eval_revenues = [
            monte_carlo_revenue(AffineMaximizer(config, family.params(run[0]), kind), setting, eval_samples,
                                np.random.default_rng(eval_seed))
            for run in runs
        ]
        result.eval_revenue = result.restart_eval_revenues[best]
        summary = result.eval_summary()
        logger.info(f'Local search ({kind}): held-out revenue mean {summary["restart_eval_revenue_mean"]:.4f}, '
                    f'best {summary["restart_eval_revenue_best"]:.4f}')
    return result
