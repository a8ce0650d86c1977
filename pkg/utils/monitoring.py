import os
import time
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterator, List, Optional

import pandas as pd

from utils.logging import setup_logger

METRIC_LOG_COLUMNS = [
    'iter',
    'revenue',
    'rgt_mean',
    'rgt_max',
    'w_rgt',
    'rgt_target',
    'wall_time_s',
]


@dataclass
class MetricPoint:
    """Represents a single metric measurement"""
    value: float
    step: int
    tags: Dict[str, str] = field(default_factory=dict)


class PerformanceMonitor:
    """Records named measurements (phase durations, losses) during a run.

    With a ``window`` only the most recent points per metric are kept.
    """

    def __init__(self, verbose: bool = False, window: Optional[int] = None):
        self.window = window
        self.metrics: Dict[str, Deque[MetricPoint]] = defaultdict(lambda: deque(maxlen=window))
        self.step = 0
        self.verbose = verbose
        self.logger = setup_logger('performance_monitor')

    def record_metric(self,
                      name: str,
                      value: float,
                      tags: Optional[Dict[str, str]] = None) -> None:
        """Record a metric measurement"""
        self.metrics[name].append(MetricPoint(value=float(value), step=self.step, tags=tags or {}))
        if self.verbose:
            tag_str = ' '.join(f'{k}={v}' for k, v in (tags or {}).items())
            self.logger.debug(f'Metric: {name}={value} {tag_str}'.strip())

    @contextmanager
    def measure(self, name: str, tags: Optional[Dict[str, str]] = None) -> Iterator[None]:
        """Context manager to measure execution time"""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            self.record_metric(f'{name}_duration', time.perf_counter() - start_time, tags)

    def get_metrics(self, name: str) -> List[MetricPoint]:
        return list(self.metrics.get(name, []))

    def get_latest(self, name: str) -> Optional[MetricPoint]:
        metrics = self.metrics.get(name, [])
        return metrics[-1] if metrics else None

    def get_summary(self, name: str) -> Dict[str, float]:
        """Get statistical summary for a metric"""
        metrics = self.metrics.get(name, [])
        if not metrics:
            return {}
        values = [m.value for m in metrics]
        return {
            'min': min(values),
            'max': max(values),
            'avg': sum(values) / len(values),
            'total': sum(values),
            'count': len(values),
        }

    def summaries(self) -> Dict[str, Dict[str, float]]:
        return {name: self.get_summary(name) for name in sorted(self.metrics)}


class MetricLog:
    """Append-only training log; written by the training loop thread only"""

    def __init__(self, path: Optional[str], include_wall_time: bool = True):
        self.path = path
        self.include_wall_time = include_wall_time
        self.rows: List[Dict[str, float]] = []
        self._started = time.perf_counter()
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            pd.DataFrame(columns=METRIC_LOG_COLUMNS).to_csv(path, index=False)

    def append(self,
               iteration: int,
               revenue: float,
               rgt_mean: float,
               rgt_max: float,
               w_rgt: float,
               rgt_target: float) -> Dict[str, float]:
        wall = time.perf_counter() - self._started if self.include_wall_time else 0.0
        row = {
            'iter': int(iteration),
            'revenue': float(revenue),
            'rgt_mean': float(rgt_mean),
            'rgt_max': float(rgt_max),
            'w_rgt': float(w_rgt),
            'rgt_target': float(rgt_target),
            'wall_time_s': round(wall, 3),
        }
        self.rows.append(row)
        if self.path:
            pd.DataFrame([row], columns=METRIC_LOG_COLUMNS).to_csv(
                self.path, mode='a', header=False, index=False, float_format='%.10g')
        return row

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=METRIC_LOG_COLUMNS)
