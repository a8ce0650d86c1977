"""Adversarial training: inner misreport ascent, outer revenue/regret descent.

Misreports for all bidders are optimized at once: profile i of the stacked
batch replaces bidder i's row with its misreport and keeps the others truthful.
"""
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from config import Config, ExperimentSpec
from core.auction import AuctionConfig, check_feasibility, sample_profiles, support_bounds
from core.dataset import load_or_generate
from core.optim import Adam
from core.scheduler import WeightScheduler
from core.tensor import Tensor, backward
from mechanisms.base import Mechanism, MechanismOutput, NeuralMechanism
from mechanisms.factory import save_mechanism
from utils.error_handler import NumericalError, ValidationError
from utils.logging import setup_logger
from utils.monitoring import MetricLog, PerformanceMonitor
from utils.rng import RandomStreams

logger = setup_logger('trainer')

Bounds = Tuple[np.ndarray, np.ndarray]

# Most recent phase durations kept for the end-of-run timing summary
TIMING_WINDOW = 1_000


def misreport_utilities(mechanism: Mechanism, values: np.ndarray, misreports: Tensor) -> Tensor:
    """u_i(v_i; (v'_i, v_-i)) for every bidder i and profile, shape (n, batch)"""
    batch, n, k = values.shape
    eye = np.eye(n).reshape(n, 1, n, 1)
    profiles = misreports.reshape(1, batch, n, k) * eye + values[None] * (1.0 - eye)
    out = mechanism(profiles.reshape(n * batch, n, k))
    allocation = out.allocation.reshape(n, batch, n, k)
    payments = out.payments.reshape(n, batch, n)
    utilities = (allocation * values[None]).sum(axis=-1) - payments
    return (utilities * np.eye(n).reshape(n, 1, n)).sum(axis=-1)


def misreport_optimize(mechanism: Mechanism,
                       values: np.ndarray,
                       steps: int,
                       lr: float,
                       bounds: Bounds,
                       rng: np.random.Generator,
                       noise: float = 0.1,
                       freeze: bool = True) -> np.ndarray:
    """Adam ascent on each bidder's utility from a noisy truthful start, projected onto ``bounds``"""
    low, high = bounds
    start = np.clip(values + rng.uniform(-noise, noise, size=values.shape), low, high)
    misreports = Tensor(start, requires_grad=True, name='misreports')
    if steps <= 0:
        return misreports.data.copy()
    optimizer = Adam([misreports], lr)
    if freeze:
        mechanism.requires_grad_(False)
    try:
        for _ in range(steps):
            optimizer.zero_grad()
            loss = -misreport_utilities(mechanism, values, misreports).sum()
            if not loss.requires_grad:
                break
            backward(loss)
            optimizer.step()
            misreports.data = np.clip(misreports.data, low, high)
    finally:
        if freeze:
            mechanism.requires_grad_(True)
    return misreports.data.copy()


def truthful_utilities(output: MechanismOutput, values: np.ndarray) -> Tensor:
    return (output.allocation * values).sum(axis=-1) - output.payments


def regret_terms(mechanism: Mechanism,
                 values: np.ndarray,
                 misreports: np.ndarray) -> Tuple[Tensor, MechanismOutput]:
    """Per-bidder regret mean_b max(0, u_mis - u_truth) as a tensor, plus the truthful output"""
    truthful = mechanism(values)
    u_truth = truthful_utilities(truthful, values)
    u_mis = misreport_utilities(mechanism, values, Tensor(misreports))
    gain = (u_mis - u_truth.swapaxes(0, 1)).clamp_min(0.0)
    return gain.mean(axis=1), truthful


def regret(mechanism: Mechanism, values: np.ndarray, misreports: np.ndarray) -> np.ndarray:
    rgt, _ = regret_terms(mechanism, values, misreports)
    return rgt.data.copy()


def outer_loss(rev: Union[Tensor, float],
               rgt: Union[Tensor, float],
               w_rev: float,
               w_rgt: float) -> Tensor:
    """-w_rev * log(1 + rev) + w_rgt * mean_i rgt_i"""
    rev = rev if isinstance(rev, Tensor) else Tensor(rev)
    rgt = rgt if isinstance(rgt, Tensor) else Tensor(rgt)
    return -w_rev * (rev + 1.0).log() + w_rgt * rgt.mean()


@dataclass
class EvaluationReport:
    revenue: float
    regret: List[float]
    ir_violations: int
    max_violation: float
    samples: int
    inner_steps: int

    @property
    def rgt_mean(self) -> float:
        return float(np.mean(self.regret))

    @property
    def rgt_max(self) -> float:
        return float(np.max(self.regret))

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), 'rgt_mean': self.rgt_mean, 'rgt_max': self.rgt_max}


def evaluate(mechanism: Mechanism,
             values: np.ndarray,
             bounds: Bounds,
             inner_steps: int,
             misreport_lr: float,
             seed: np.random.SeedSequence,
             noise: float = 0.1,
             chunk_size: int = 1_000,
             workers: int = 1) -> EvaluationReport:
    """Revenue, per-bidder regret, IR violations and feasibility over ``values``.

    Chunks run on a thread pool, each with its own tape and generator; the
    reduction follows chunk order so results do not depend on ``workers``.
    """
    if values.ndim != 3 or values.shape[1:] != (mechanism.config.n, mechanism.config.k):
        raise ValidationError(f'Evaluation profiles {values.shape} do not match '
                              f'n={mechanism.config.n}, k={mechanism.config.k}')
    chunks = [values[s:s + chunk_size] for s in range(0, len(values), chunk_size)]
    seeds = seed.spawn(len(chunks))

    def run(job: Tuple[np.ndarray, np.random.SeedSequence]) -> Tuple[float, np.ndarray, int, float]:
        chunk, chunk_seed = job
        misreports = misreport_optimize(mechanism, chunk, inner_steps, misreport_lr, bounds,
                                        np.random.default_rng(chunk_seed), noise, freeze=False)
        rgt, truthful = regret_terms(mechanism, chunk, misreports)
        outcome = truthful.outcome()
        utilities = np.sum(outcome.allocation * chunk, axis=-1) - outcome.payments
        report = check_feasibility(outcome.allocation, mechanism.config)
        return (float(outcome.payments.sum()), rgt.data * len(chunk),
                int(np.sum(utilities < -Config.FEASIBILITY_TOL)), report.max_violation)

    mechanism.requires_grad_(False)
    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(run, zip(chunks, seeds)))
    finally:
        mechanism.requires_grad_(True)

    samples = len(values)
    return EvaluationReport(
        revenue=sum(r[0] for r in results) / samples,
        regret=(sum(r[1] for r in results) / samples).tolist(),
        ir_violations=sum(r[2] for r in results),
        max_violation=max(r[3] for r in results),
        samples=samples,
        inner_steps=inner_steps,
    )


@dataclass
class TrainResult:
    checkpoint_dir: str
    metric_log: str
    iterations: int
    revenue: float
    rgt_mean: float
    w_rgt: float
    validation: List[Dict[str, Any]] = field(default_factory=list)
    timings: Dict[str, Dict[str, float]] = field(default_factory=dict)


class Trainer:
    """Runs the adversarial loop for one neural mechanism and writes logs and checkpoints under ``run_dir``"""

    def __init__(self,
                 mechanism: NeuralMechanism,
                 spec: ExperimentSpec,
                 run_dir: str,
                 streams: Optional[RandomStreams] = None,
                 monitor: Optional[PerformanceMonitor] = None,
                 profiles: Optional[np.ndarray] = None):
        self.mechanism = mechanism
        self.spec = spec
        self.train_config = spec.train
        self.config = AuctionConfig(spec.n, spec.m)
        if (mechanism.config.n, mechanism.config.m) != (spec.n, spec.m):
            raise ValidationError(f'Mechanism is {mechanism.config.n}x{mechanism.config.m}, '
                                  f'experiment is {spec.scale}')
        self.run_dir = run_dir
        self.streams = streams or RandomStreams(spec.seed)
        self.monitor = monitor or PerformanceMonitor(window=TIMING_WINDOW)
        self.profiles = profiles
        self.bounds = support_bounds(spec.setting, self.config, self.train_config.misreport_domain)
        self.optimizer = Adam(mechanism.parameters(), self.train_config.lr,
                              (self.train_config.beta1, self.train_config.beta2), self.train_config.eps)
        self.scheduler = WeightScheduler(self.train_config)
        self.data_rng = self.streams.generator('dataset')
        self.misreport_rng = self.streams.generator('misreports')
        self.shuffle_rng = self.streams.generator('shuffle')

    def _batches(self) -> Iterator[np.ndarray]:
        cfg = self.train_config
        if cfg.on_the_fly:
            while True:
                yield sample_profiles(self.spec.setting, self.config, cfg.batch_size, self.data_rng).values
        data = self.profiles
        if data is None:
            cache = os.path.join(self.run_dir, 'profiles.bin')
            data = load_or_generate(cache, self.spec.setting, self.config, cfg.dataset_size, self.data_rng).values
        size = len(data)
        while True:
            order = self.shuffle_rng.permutation(size)
            for start in range(0, max(size - cfg.batch_size, 0) + 1, cfg.batch_size):
                yield data[order[start:start + cfg.batch_size]]

    def _dump(self, t: int, values: np.ndarray, misreports: np.ndarray) -> str:
        path = os.path.join(self.run_dir, f'nonfinite_iter{t}.npz')
        np.savez(path, values=values, misreports=misreports,
                 **{f'param.{name}': p.data for name, p in self.mechanism.named_parameters().items()})
        return path

    def step(self, values: np.ndarray, t: int) -> Dict[str, float]:
        """One outer iteration on ``values``; returns the logged metrics"""
        cfg = self.train_config
        with self.monitor.measure('inner'):
            misreports = misreport_optimize(self.mechanism, values, cfg.inner_steps, cfg.misreport_lr,
                                            self.bounds, self.misreport_rng, cfg.misreport_noise)
        with self.monitor.measure('outer'):
            self.optimizer.zero_grad()
            rgt, truthful = regret_terms(self.mechanism, values, misreports)
            rev = truthful.payments.sum(axis=-1).mean()
            loss = outer_loss(rev, rgt, self.scheduler.w_rev, self.scheduler.w_rgt)
            if not np.isfinite(loss.item()):
                path = self._dump(t, values, misreports)
                raise NumericalError(f'Non-finite outer loss at iteration {t}', path)
            backward(loss)
            self.optimizer.step()

        target = self.scheduler.target(t)
        rgt_values = rgt.data
        aggregate = float(np.max(rgt_values) if cfg.regret_aggregation == 'max' else np.mean(rgt_values))
        self.scheduler.update(aggregate, rev.item(), t)
        return {
            'loss': loss.item(),
            'revenue': rev.item(),
            'rgt_mean': float(np.mean(rgt_values)),
            'rgt_max': float(np.max(rgt_values)),
            'w_rgt': self.scheduler.w_rgt,
            'rgt_target': target,
        }

    def validate(self, values: np.ndarray) -> EvaluationReport:
        cfg = self.train_config
        workers = Config.WORKERS if cfg.parallel_validation else 1
        with self.monitor.measure('validation'):
            return evaluate(self.mechanism, values, self.bounds, cfg.validation_inner_steps,
                            cfg.misreport_lr, self.streams.sequence('validation'),
                            cfg.misreport_noise, workers=workers)

    def save(self, directory: str, t: int) -> None:
        save_mechanism(self.mechanism, directory, extra={
            'iteration': t,
            'setting': self.spec.setting,
            'seed': self.spec.seed,
            'scheduler': self.scheduler.state.to_dict(),
            'rgt_target': self.scheduler.target(t),
            'optimizer_step': self.optimizer.t,
        })

    def write_manifest(self) -> str:
        os.makedirs(self.run_dir, exist_ok=True)
        path = os.path.join(self.run_dir, 'run_manifest.json')
        with open(path, 'w') as f:
            json.dump({'spec': self.spec.model_dump(), 'architecture': self.mechanism.describe()},
                      f, indent=2, sort_keys=True)
        return path

    def train(self) -> TrainResult:
        cfg = self.train_config
        self.write_manifest()
        log_path = os.path.join(self.run_dir, 'metrics.csv')
        metric_log = MetricLog(log_path)
        validation_values = sample_profiles(self.spec.setting, self.config, cfg.validation_samples,
                                            self.streams.generator('validation')).values
        batches = self._batches()
        validations: List[Dict[str, Any]] = []
        metrics: Dict[str, float] = {}
        logger.info(f'Training {self.mechanism.kind} on setting {self.spec.setting} {self.spec.scale} '
                    f'for {cfg.iterations} iterations')

        for t in range(1, cfg.iterations + 1):
            self.monitor.step = t
            metrics = self.step(next(batches), t)
            if t % cfg.log_interval == 0 or t == cfg.iterations:
                metric_log.append(t, metrics['revenue'], metrics['rgt_mean'], metrics['rgt_max'],
                                  metrics['w_rgt'], metrics['rgt_target'])
                logger.info(f'iter {t}: rev={metrics["revenue"]:.4f} rgt={metrics["rgt_mean"]:.5f} '
                            f'w_rgt={metrics["w_rgt"]:.4f} target={metrics["rgt_target"]:.5f}')
            if cfg.validation_interval and t % cfg.validation_interval == 0:
                report = self.validate(validation_values)
                validations.append({'iter': t, **report.to_dict()})
                logger.info(f'validation @ {t}: rev={report.revenue:.4f} rgt={report.rgt_mean:.5f}')
            if cfg.checkpoint_interval and t % cfg.checkpoint_interval == 0 and t != cfg.iterations:
                self.save(os.path.join(self.run_dir, 'checkpoints', f'iter_{t:06d}'), t)

        final_dir = os.path.join(self.run_dir, 'checkpoint')
        self.save(final_dir, cfg.iterations)
        timings = self.monitor.summaries()
        for name, summary in timings.items():
            logger.info(f'{name}: avg={summary["avg"]:.4f}s max={summary["max"]:.4f}s '
                        f'over the last {summary["count"]} calls')
        return TrainResult(
            checkpoint_dir=final_dir,
            metric_log=log_path,
            iterations=cfg.iterations,
            revenue=metrics.get('revenue', 0.0),
            rgt_mean=metrics.get('rgt_mean', 0.0),
            w_rgt=self.scheduler.w_rgt,
            validation=validations,
            timings=timings,
        )
