"""
Performance monitoring for training and evaluation runs

Collects counters, gauges and timer histograms (forward, backward, update
phases of each step) plus process memory through psutil. Metrics are logged
as a summary; they never enter the telemetry CSVs, which must stay
byte-deterministic.
"""

import functools
import logging
import threading
import time
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Deque, Dict, Iterator, List, Optional, Union

import psutil


logger = logging.getLogger(__name__)


@dataclass
class MetricValue:
    """Individual metric value with timestamp"""
    value: Union[int, float]
    timestamp: datetime
    labels: Dict[str, str] = field(default_factory=dict)


class MetricsCollector:
    """Collects and stores performance metrics"""

    def __init__(self, max_history: int = 10000):
        self.max_history = max_history
        self._metrics: Dict[str, Deque[MetricValue]] = defaultdict(lambda: deque(maxlen=max_history))
        self._counters: Dict[str, int] = defaultdict(int)
        self._gauges: Dict[str, float] = defaultdict(float)
        self._lock = threading.Lock()
        self._start_time = datetime.utcnow()

    def increment_counter(self, name: str, value: int = 1, labels: Optional[Dict[str, str]] = None) -> None:
        key = self._build_key(name, labels)
        with self._lock:
            self._counters[key] += value

    def set_gauge(self, name: str, value: float, labels: Optional[Dict[str, str]] = None) -> None:
        key = self._build_key(name, labels)
        with self._lock:
            self._gauges[key] = value

    def record_histogram(self, name: str, value: float, labels: Optional[Dict[str, str]] = None) -> None:
        with self._lock:
            self._metrics[name].append(MetricValue(value, datetime.utcnow(), labels or {}))

    def record_timer(self, name: str, duration: float, labels: Optional[Dict[str, str]] = None) -> None:
        self.record_histogram(f"{name}_duration", duration, labels)

    def get_counter(self, name: str, labels: Optional[Dict[str, str]] = None) -> int:
        return self._counters[self._build_key(name, labels)]

    def get_gauge(self, name: str, labels: Optional[Dict[str, str]] = None) -> float:
        return self._gauges[self._build_key(name, labels)]

    def get_histogram_stats(self, name: str) -> Dict[str, float]:
        """Get histogram statistics"""
        values = [m.value for m in self._metrics.get(name, ())]
        if not values:
            return {"count": 0, "sum": 0, "avg": 0, "min": 0, "max": 0, "p50": 0, "p95": 0, "p99": 0}

        sorted_values = sorted(values)
        count = len(values)
        return {
            "count": count,
            "sum": sum(values),
            "avg": sum(values) / count,
            "min": sorted_values[0],
            "max": sorted_values[-1],
            "p50": sorted_values[int(0.5 * (count - 1))],
            "p95": sorted_values[int(0.95 * (count - 1))],
            "p99": sorted_values[int(0.99 * (count - 1))],
        }

    def get_all_metrics(self) -> Dict[str, Any]:
        return {
            "counters": dict(self._counters),
            "gauges": dict(self._gauges),
            "histograms": {name: self.get_histogram_stats(name) for name in list(self._metrics)},
            "uptime_seconds": (datetime.utcnow() - self._start_time).total_seconds(),
        }

    def _build_key(self, name: str, labels: Optional[Dict[str, str]]) -> str:
        if not labels:
            return name
        label_str = ",".join(f"{k}={v}" for k, v in sorted(labels.items()))
        return f"{name}{{{label_str}}}"


class SystemMonitor:
    """Process resource sampling"""

    def __init__(self):
        self.process = psutil.Process()

    def get_memory_usage(self) -> Dict[str, float]:
        memory_info = self.process.memory_info()
        return {
            "rss_mb": memory_info.rss / 1024 / 1024,
            "vms_mb": memory_info.vms / 1024 / 1024,
            "percent": self.process.memory_percent(),
        }


class PerformanceMonitor:
    """Main performance monitoring service"""

    def __init__(self):
        self.metrics = MetricsCollector()
        self.system_monitor = SystemMonitor()

    @contextmanager
    def time_operation(self, name: str, labels: Optional[Dict[str, str]] = None) -> Iterator[None]:
        """Time a block and record it under ``<name>_duration``"""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            self.metrics.record_timer(name, time.perf_counter() - start_time, labels)

    def record_step(self, mode: str, duration: float, diverged: bool) -> None:
        """Record one training step"""
        labels = {"mode": mode}
        self.metrics.increment_counter("train_steps_total", labels=labels)
        self.metrics.record_timer("train_step", duration, labels)
        if diverged:
            self.metrics.increment_counter("train_divergence_total", labels=labels)

    def record_evaluation(self, scene_count: int, duration: float) -> None:
        self.metrics.increment_counter("evaluated_scenes_total", scene_count)
        self.metrics.record_timer("evaluation", duration)

    def sample_memory(self) -> float:
        rss = self.system_monitor.get_memory_usage()["rss_mb"]
        self.metrics.set_gauge("memory_rss_mb", rss)
        return rss

    def get_performance_summary(self) -> Dict[str, Any]:
        return {
            "memory": self.system_monitor.get_memory_usage(),
            "metrics": self.metrics.get_all_metrics(),
        }

    def log_summary(self) -> None:
        """Log step timing percentiles and memory at INFO"""
        self.sample_memory()
        for name in ("train_step_duration", "forward_duration", "backward_duration",
                     "update_duration", "evaluation_duration", "load_dataset_duration"):
            stats = self.metrics.get_histogram_stats(name)
            if stats["count"]:
                logger.info(
                    f"{name}: n={stats['count']} avg={stats['avg'] * 1000:.2f}ms "
                    f"p95={stats['p95'] * 1000:.2f}ms max={stats['max'] * 1000:.2f}ms"
                )
        logger.info(f"Resident memory: {self.metrics.get_gauge('memory_rss_mb'):.1f} MB")


_performance_monitor: Optional[PerformanceMonitor] = None


def get_performance_monitor() -> PerformanceMonitor:
    """Get the global performance monitor instance"""
    global _performance_monitor
    if _performance_monitor is None:
        _performance_monitor = PerformanceMonitor()
    return _performance_monitor


def performance_timer(name: str, labels: Optional[Dict[str, str]] = None):
    """Decorator for timing function execution"""
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            monitor = get_performance_monitor()
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                monitor.metrics.record_timer(name, time.perf_counter() - start_time, labels)
                return result
            except Exception as e:
                error_labels = {**(labels or {}), "error": type(e).__name__}
                monitor.metrics.record_timer(f"{name}_error", time.perf_counter() - start_time, error_labels)
                raise
        return wrapper
    return decorator
