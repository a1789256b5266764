"""Delete-d jackknife errors and sample-size convergence scans.

Bootstrap is deliberately absent: nearest-neighbour estimators break down
on resamples that contain repeated points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientSamples, ValidationError
from .estimators import EstimateWithCI

# sample sizes at or below this are reported as not converged
CONVERGENCE_MIN_SAMPLES = 500


@dataclass(frozen=True)
class JackknifePlan:
    delete_fraction: float = 0.05
    repetitions: int = 3000
    seed: int = 0
    confidence: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.delete_fraction < 1.0:
            raise ValidationError("delete_fraction must be in (0, 1)")
        if self.repetitions < 2:
            raise ValidationError("repetitions must be >= 2")
        if self.confidence != 0.95:
            raise ValidationError("only 95% intervals (2 sigma) are supported")

    def n_deleted(self, n: int) -> int:
        d = int(round(self.delete_fraction * n))
        if d < 1:
            raise InsufficientSamples(
                f"deleting {self.delete_fraction:.0%} of {n} samples removes no sample"
            )
        return d


def _subset(data, idx):
    if hasattr(data, "take_shots"):
        return data.take_shots(idx)
    if hasattr(data, "take"):
        return data.take(idx)
    return np.asarray(data)[idx]


def replicate_indices(n: int, d: int, seed: int, r: int) -> np.ndarray:
    """Kept indices for replicate ``r``; depends only on ``(seed, r)``."""
    rng = np.random.default_rng([seed, r])
    drop = rng.choice(n, size=d, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return np.flatnonzero(keep)


def jackknife(estimator: Callable, data, plan: JackknifePlan = None, *, min_samples: int = 2,
              units: str = "nats", k: int = None, method: str = "") -> EstimateWithCI:
    """Delete-d jackknife around ``estimator(data)``.

    ``data`` is anything with ``len`` and a shot-subset method (ensembles,
    data clouds) or a plain array indexed along axis 0.  The standard error is
    ``sqrt((N - d) / d * mean_r (theta_r - mean theta)^2)`` over
    ``plan.repetitions`` random d-subsets.
    """
    plan = plan or JackknifePlan()
    n = len(data)
    d = plan.n_deleted(n)
    if n - d < min_samples:
        raise InsufficientSamples(f"{n - d} samples left after deleting {d}; need {min_samples}")
    value = float(estimator(data))
    thetas = np.empty(plan.repetitions)
    for r in range(plan.repetitions):
        thetas[r] = estimator(_subset(data, replicate_indices(n, d, plan.seed, r)))
    var = (n - d) / d * np.mean((thetas - thetas.mean()) ** 2)
    stderr = float(math.sqrt(var))
    return EstimateWithCI(
        value,
        stderr,
        units=units,
        k=k,
        n_samples=n,
        method=method,
        meta={"delete_d": d, "repetitions": plan.repetitions, "seed": plan.seed},
    )


@dataclass(frozen=True)
class ConvergenceRow:
    n_samples: int
    value: float
    stderr: float
    converged: bool


def convergence_scan(estimator: Callable, data, sizes: Sequence[int], seed: int = 0,
                     plan: JackknifePlan = None, *, min_samples: int = 2) -> list:
    """Evaluate the estimator with jackknife errors on seeded random subsamples.

    Rows come back in increasing size; sizes at or below 500 are flagged as
    not converged.
    """
    plan = plan or JackknifePlan()
    n = len(data)
    sizes = sorted(int(s) for s in sizes)
    if not sizes:
        raise ValidationError("no sample sizes given")
    if sizes[-1] > n:
        raise InsufficientSamples(f"requested {sizes[-1]} samples, only {n} available")
    rows = []
    for i, size in enumerate(sizes):
        rng = np.random.default_rng([seed, i, size])
        idx = np.sort(rng.choice(n, size=size, replace=False))
        sub = _subset(data, idx)
        p = JackknifePlan(plan.delete_fraction, plan.repetitions, plan.seed + i + 1)
        est = jackknife(estimator, sub, p, min_samples=min_samples)
        rows.append(ConvergenceRow(size, est.value, est.stderr, size > CONVERGENCE_MIN_SAMPLES))
    return rows
