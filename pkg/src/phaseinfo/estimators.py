"""Nearest-neighbour information estimators (all results in nats).

* :func:`ksg_mutual_information` -- Kraskov-Stoegbauer-Grassberger estimator
  with max-norm joint distances and strict marginal box counts.
* :func:`kl_to_nearest_gaussian` -- relative entropy between the data and the
  Gaussian with the same mean and covariance, by the two-sample k-NN
  divergence estimator.
* :func:`differential_entropy` -- Kozachenko-Leonenko entropy under max-norm,
  used to cross-check ``I = S_A + S_B - S_AB``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import knn
from .ensemble import DataCloud
from .errors import DomainError, DuplicatePoints, KTooLarge, SingularCovariance, ValidationError

LN2 = math.log(2.0)
UNITS = ("nats", "bits")


@dataclass(frozen=True)
class EstimateWithCI:
    """A scalar estimate with its standard error and 95% interval (value +/- 2 stderr)."""

    value: float
    stderr: float = 0.0
    ci95: tuple = None
    units: str = "nats"
    k: int = None
    n_samples: int = None
    method: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.units not in UNITS:
            raise ValidationError(f"units must be one of {UNITS}, got {self.units!r}")
        if self.ci95 is None:
            object.__setattr__(self, "ci95", (self.value - 2 * self.stderr, self.value + 2 * self.stderr))
        else:
            object.__setattr__(self, "ci95", (float(self.ci95[0]), float(self.ci95[1])))

    def to_units(self, units: str) -> "EstimateWithCI":
        if units == self.units:
            return self
        if units not in UNITS:
            raise ValidationError(f"units must be one of {UNITS}, got {units!r}")
        f = 1.0 / LN2 if units == "bits" else LN2
        return replace(
            self,
            value=self.value * f,
            stderr=self.stderr * f,
            ci95=(self.ci95[0] * f, self.ci95[1] * f),
            units=units,
        )

    def with_method(self, method: str) -> "EstimateWithCI":
        return replace(self, method=method)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateWithCI":
        d = dict(d)
        d["ci95"] = tuple(d["ci95"])
        return cls(**d)


# --- digamma ---------------------------------------------------------------------

# B_2n / (2n) for n = 1..7
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x):
    """Digamma function for positive arguments.

    Shifts the argument above 10 with ``psi(x) = psi(x + 1) - 1/x`` and then
    sums the asymptotic series, which is accurate to a few ulp there.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DomainError("digamma is only defined here for x > 0")
    y = arr.copy()
    acc = np.zeros_like(y)
    while True:
        low = y < 10.0
        if not np.any(low):
            break
        acc[low] -= 1.0 / y[low]
        y[low] += 1.0
    inv2 = 1.0 / (y * y)
    series = np.zeros_like(y)
    for c in reversed(_ASYMPTOTIC):
        series = (series + c) * inv2
    out = np.log(y) - 0.5 / y - series + acc
    return float(out) if np.ndim(x) == 0 else out


# --- helpers ---------------------------------------------------------------------

def _as_cloud(cloud) -> DataCloud:
    if isinstance(cloud, DataCloud):
        return cloud
    pts = np.asarray(cloud, dtype=np.float64)
    pts = pts[:, None] if pts.ndim == 1 else pts
    return DataCloud(pts, pts.shape[1])


def duplicate_shots(points) -> np.ndarray:
    """Row indices of points that coincide exactly with another point."""
    _, inverse, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    return np.flatnonzero(counts[inverse.ravel()] > 1)


def _prepare(cloud, k: int, jitter: bool, seed: int) -> DataCloud:
    cloud = _as_cloud(cloud)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if cloud.n_samples < k + 1:
        raise KTooLarge(f"k={k} requires at least {k + 1} samples, got {cloud.n_samples}")
    if jitter:
        return cloud.jittered(seed)
    dup = duplicate_shots(cloud.points)
    if dup.size:
        raise DuplicatePoints(dup)
    return cloud


# --- mutual information ----------------------------------------------------------

def ksg_mutual_information(cloud: DataCloud, k: int = 2, *, jitter: bool = False, seed: int = 0,
                           method: str = "auto") -> float:
    """KSG estimate of I(A:B) in nats.

    Negative values are estimator noise and are returned unclamped.
    """
    cloud = _prepare(cloud, k, jitter, seed)
    if not 0 < cloud.n_a < cloud.dim:
        raise ValidationError("both subspaces of the cloud must be non-empty")
    n = cloud.n_samples
    _, n_a, n_b = knn.ksg_counts(cloud.points, cloud.n_a, k, method=method)
    return float(digamma(k) + digamma(n) - np.mean(digamma(n_a) + digamma(n_b)))


# --- nearest Gaussian ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NearestGaussian:
    """Gaussian with a given mean and covariance; ``factor`` is the Cholesky factor."""

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_nearest_gaussian(cloud) -> NearestGaussian:
    """Sample mean and unbiased sample covariance of the cloud."""
    pts = _as_cloud(cloud).points
    n, d = pts.shape
    if n < d + 1:
        raise SingularCovariance(f"{n} samples cannot give a full-rank covariance in {d} dimensions")
    mean = pts.mean(axis=0)
    cov = np.atleast_2d(np.cov(pts, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    evals = np.linalg.eigvalsh(cov)
    if evals[0] <= 1e-12 * max(evals[-1], np.finfo(float).tiny):
        raise SingularCovariance(
            "sample covariance is singular; check for degenerate axes or duplicated pixels"
        )
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from None
    return NearestGaussian(mean, cov, factor)


def sample_gaussian(model: NearestGaussian, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.dim))
    return model.mean + z @ model.factor.T


def kl_to_nearest_gaussian(cloud, k: int = 2, seed: int = 0, *, jitter: bool = False) -> float:
    """Relative entropy S[f || f^G] in nats from samples of ``f``.

    ``N_s`` samples are drawn from the moment-matched Gaussian; ``rho`` is the
    k-th neighbour distance inside the data (self excluded) and ``nu`` the
    k-th neighbour distance from each data point into the Gaussian sample.
    """
    cloud = _prepare(cloud, k, jitter, seed)
    pts = cloud.points
    n, d = pts.shape
    model = fit_nearest_gaussian(pts)
    gauss = sample_gaussian(model, n, seed)
    rho = knn.NeighborIndex(pts).kth_distances(k)
    nu = knn.cross_kth_distances(pts, gauss, k)
    return float(math.log(n / (n - 1)) + d * np.mean(np.log(nu / rho)))


# --- differential entropy --------------------------------------------------------

def differential_entropy(cloud, k: int = 2, *, jitter: bool = False, seed: int = 0) -> float:
    """Kozachenko-Leonenko entropy in nats with max-norm balls (volume ``(2 eps)^D``)."""
    cloud = _prepare(cloud, k, jitter, seed)
    n, d = cloud.points.shape
    eps = knn.NeighborIndex(cloud.points).kth_distances(k)
    return float(digamma(n) - digamma(k) + d * np.mean(np.log(2.0 * eps)))
