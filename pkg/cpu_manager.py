#!/usr/bin/env python3
"""
CPU Management Module for Experiment Runs
Keeps host CPU usage below a ceiling while independent training runs execute in
worker processes
"""

import logging
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Optional

import psutil

logger = logging.getLogger(__name__)

DEFAULT_MAX_CPU = float(os.getenv("CALIBLAB_MAX_CPU_PERCENT", "80"))


class CPUManager:
    """
    Samples CPU usage in a background thread and reports when to hold back new work
    """

    def __init__(self, max_cpu_percent: float = DEFAULT_MAX_CPU, check_interval: float = 1.0):
        """
        Args:
            max_cpu_percent: usage above which new runs wait
            check_interval: seconds between samples
        """
        if not 0 < max_cpu_percent <= 100:
            raise ValueError(f"max_cpu_percent must lie in (0, 100], got {max_cpu_percent}")
        self.max_cpu_percent = max_cpu_percent
        self.check_interval = check_interval
        self.monitoring = False
        self.current_cpu_usage = 0.0
        self.throttle_active = False
        self.monitor_thread: Optional[threading.Thread] = None

    def start_monitoring(self):
        if not self.monitoring:
            self.monitoring = True
            self.monitor_thread = threading.Thread(target=self._monitor_cpu, daemon=True)
            self.monitor_thread.start()
            logger.debug(f"CPU monitoring started (max: {self.max_cpu_percent}%)")

    def stop_monitoring(self):
        self.monitoring = False
        if self.monitor_thread:
            self.monitor_thread.join(timeout=2 * self.check_interval + 1)
        self.monitor_thread = None

    def sample(self, interval: float = 0.1) -> float:
        """Take one measurement and update the throttle flag"""
        self.current_cpu_usage = psutil.cpu_percent(interval=interval)
        was_active = self.throttle_active
        self.throttle_active = self.current_cpu_usage >= self.max_cpu_percent
        if self.throttle_active and not was_active:
            logger.warning(f"CPU usage high: {self.current_cpu_usage:.1f}% - holding new runs")
        elif was_active and not self.throttle_active:
            logger.info(f"CPU usage normal: {self.current_cpu_usage:.1f}% - resuming")
        return self.current_cpu_usage

    def _monitor_cpu(self):
        while self.monitoring:
            self.sample(interval=min(1.0, self.check_interval))
            time.sleep(self.check_interval)

    def wait_for_cpu(self, timeout: Optional[float] = None) -> bool:
        """
        Block until usage is below the ceiling

        Returns:
            True once below the ceiling, False if the timeout expired first
        """
        start_time = time.time()
        while self.throttle_active:
            if timeout is not None and (time.time() - start_time) >= timeout:
                return False
            # Back off harder the further usage is over the ceiling
            excess = self.current_cpu_usage - self.max_cpu_percent
            time.sleep(2.0 if excess > 20 else 1.0 if excess > 10 else 0.5)
            if not self.monitoring:
                self.sample()
        return True

    def get_cpu_stats(self) -> Dict[str, Any]:
        return {
            "current_usage": self.current_cpu_usage,
            "max_allowed": self.max_cpu_percent,
            "throttle_active": self.throttle_active,
            "cpu_count": psutil.cpu_count(),
        }

    def __enter__(self):
        self.start_monitoring()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.stop_monitoring()


def worker_cap(requested: int) -> int:
    """Half the logical cores, at least one, never more than requested"""
    cores = psutil.cpu_count() or 1
    return max(1, min(int(requested), cores // 2))


class RunThrottler:
    """
    Executes independent runs with at most `worker_cap(workers)` processes,
    waiting for CPU headroom before each submission

    Results come back in job order. With a cap of one, jobs run in-process.
    """

    def __init__(self, workers: int = 1, cpu_manager: Optional[CPUManager] = None):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.max_concurrent = worker_cap(workers)
        self.cpu_manager = cpu_manager

    def map(self, func: Callable[[Any], Any], jobs: Iterable[Any]) -> List[Any]:
        """
        Args:
            func: picklable top-level function
            jobs: one argument per run

        Raises:
            whatever `func` raises, for the first failing job in order
        """
        jobs = list(jobs)
        if self.max_concurrent == 1 or len(jobs) <= 1:
            return [func(job) for job in jobs]

        manager = self.cpu_manager or get_cpu_manager()
        logger.info(f"running {len(jobs)} jobs on {self.max_concurrent} workers")
        with ProcessPoolExecutor(max_workers=self.max_concurrent) as pool:
            futures = []
            for job in jobs:
                manager.wait_for_cpu()
                futures.append(pool.submit(func, job))
            return [f.result() for f in futures]


_cpu_manager: Optional[CPUManager] = None


def get_cpu_manager(max_cpu: float = DEFAULT_MAX_CPU) -> CPUManager:
    """Shared, already-monitoring manager"""
    global _cpu_manager
    if _cpu_manager is None:
        _cpu_manager = CPUManager(max_cpu)
        _cpu_manager.start_monitoring()
    return _cpu_manager
