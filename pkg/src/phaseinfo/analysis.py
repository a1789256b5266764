"""Mutual-information scans over partitions, decay fits and coherence matching.

Scans return a :class:`ScanResult` whose rows pair an x descriptor (a small
dict) with an :class:`EstimateWithCI`.  Trend statements (plateaus,
sub-linear growth, monotone decay) are turned into explicit statistical
tests at 95% in the ``*_test`` helpers below.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .ensemble import DataCloud, Partition, PhaseEnsemble, build_cloud, coherence_factor, mean_cos
from .errors import BlockTooLarge, DegenerateData, FitDiverged, ValidationError, VolumeTooLarge
from .estimators import EstimateWithCI, kl_to_nearest_gaussian, ksg_mutual_information
from .lsq import levenberg_marquardt
from .resampling import JackknifePlan, jackknife
from .sgsim import CoherenceCurve, PipelineConfig, SGParams, _bracket, check_monotone, simulate_pipeline

SCAN_KINDS = ("volume", "area", "separation", "q", "nongauss")


@dataclass
class ScanRow:
    x: dict
    estimate: EstimateWithCI
    partition: Partition = None

    def as_dict(self) -> dict:
        d = dict(self.x)
        d.update(value=self.estimate.value, stderr=self.estimate.stderr,
                 ci95_lo=self.estimate.ci95[0], ci95_hi=self.estimate.ci95[1], units=self.estimate.units)
        if self.partition is not None:
            labels = self.partition.labels()
            d["axes_A"] = " ".join(str(i) for i in labels["A"])
            d["axes_B"] = " ".join(str(i) for i in labels["B"])
        return d


@dataclass
class ScanResult:
    scan_kind: str
    rows: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scan_kind not in SCAN_KINDS:
            raise ValidationError(f"scan_kind must be one of {SCAN_KINDS}")

    def __len__(self):
        return len(self.rows)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.estimate.value for r in self.rows])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([r.estimate.stderr for r in self.rows])

    def column(self, key: str) -> np.ndarray:
        return np.array([r.x[key] for r in self.rows])

    def table(self, units: str = "nats") -> list:
        out = []
        for r in self.rows:
            out.append(ScanRow(r.x, r.estimate.to_units(units), r.partition).as_dict())
        return out


def mi_estimate(ensemble_or_cloud, partition: Partition = None, k: int = 2, plan: JackknifePlan = None) -> EstimateWithCI:
    """KSG mutual information with its delete-d jackknife interval."""
    if isinstance(ensemble_or_cloud, DataCloud):
        cloud = ensemble_or_cloud
    else:
        cloud = build_cloud(ensemble_or_cloud, partition)
    return jackknife(lambda c: ksg_mutual_information(c, k), cloud, plan, min_samples=k + 1, k=k, method="ksg")


def kl_estimate(ensemble, k: int = 2, seed: int = 0, plan: JackknifePlan = None) -> EstimateWithCI:
    """Relative entropy to the nearest Gaussian over all pixels, with jackknife errors."""
    pts = ensemble.samples if isinstance(ensemble, PhaseEnsemble) else np.asarray(ensemble)
    return jackknife(lambda x: kl_to_nearest_gaussian(x, k, seed), pts, plan, min_samples=pts.shape[1] + 2,
                     k=k, method="kl_nearest_gaussian")


def _meta(ensemble: PhaseEnsemble, k: int, plan: JackknifePlan, **extra) -> dict:
    plan = plan or JackknifePlan()
    meta = {"k": k, "jackknife": {"delete_fraction": plan.delete_fraction, "repetitions": plan.repetitions,
                                  "seed": plan.seed},
            "n_samples": ensemble.n_shots, "n_pixels": ensemble.n_pixels, "dz": ensemble.dz,
            "source": ensemble.meta.get("source"), "ensemble_seed": ensemble.meta.get("seed")}
    meta.update(extra)
    return meta


# --- volume and area ------------------------------------------------------------------

def volume_scan(ensemble: PhaseEnsemble, k: int = 2, plan: JackknifePlan = None) -> ScanResult:
    """MI between pixels ``1..b`` and the rest for every boundary position ``b``."""
    n = ensemble.n_pixels
    if n < 2:
        raise ValidationError("volume scan needs at least 2 pixels")
    rows = []
    for b in range(1, n):
        part = Partition(range(b), range(b, n), n)
        rows.append(ScanRow({"boundary": b, "volume_fraction": b / n}, mi_estimate(ensemble, part, k, plan), part))
    return ScanResult("volume", rows, _meta(ensemble, k, plan))


def equal_volume_partitions(n_pixels: int, volume: int) -> list:
    """All unordered pairs of disjoint pixel sets of size ``volume``."""
    if volume < 1 or 2 * volume > n_pixels:
        raise VolumeTooLarge(f"two regions of {volume} pixels do not fit in {n_pixels}")
    out = []
    seen = set()
    for a in itertools.combinations(range(n_pixels), volume):
        rest = [i for i in range(n_pixels) if i not in a]
        for b in itertools.combinations(rest, volume):
            key = frozenset((a, b))
            if key in seen:
                continue
            seen.add(key)
            first, second = sorted((a, b))
            out.append(Partition(first, second, n_pixels))
    return out


def area_scan(ensemble: PhaseEnsemble, volume: int = 3, k: int = 2, plan: JackknifePlan = None) -> ScanResult:
    """MI for every equal-volume bipartition, ordered by boundary count."""
    parts = equal_volume_partitions(ensemble.n_pixels, volume)
    parts.sort(key=lambda p: (p.boundary_count, p.axes_A, p.axes_B))
    rows = [
        ScanRow({"boundary_count": p.boundary_count, "partition_id": i}, mi_estimate(ensemble, p, k, plan), p)
        for i, p in enumerate(parts)
    ]
    return ScanResult("area", rows, _meta(ensemble, k, plan, volume=volume))


# --- separation ---------------------------------------------------------------------

def block_cloud(ensemble: PhaseEnsemble, block: int, d: int) -> DataCloud:
    """2D cloud of block means: pixels ``[0, block)`` and ``[block + d, 2 block + d)``."""
    x = ensemble.samples
    a = x[:, :block].mean(axis=1)
    b = x[:, block + d: 2 * block + d].mean(axis=1)
    return DataCloud.from_arrays(a, b)


def separation_scan(ensemble: PhaseEnsemble, block: int = 5, k: int = 2, plan: JackknifePlan = None,
                    d_max: int = None) -> ScanResult:
    """MI between two averaged blocks as their gap ``d`` (fine pixels) grows."""
    n = ensemble.n_pixels
    if block < 1 or 2 * block > n:
        raise BlockTooLarge(f"two blocks of {block} pixels do not fit in {n}")
    top = n - 2 * block if d_max is None else min(int(d_max), n - 2 * block)
    length = n * ensemble.dz
    rows = []
    for d in range(top + 1):
        cloud = block_cloud(ensemble, block, d)
        est = mi_estimate(cloud, k=k, plan=plan)
        rows.append(ScanRow({"d_pixels": d, "d_um": d * ensemble.dz, "d_over_L": d * ensemble.dz / length}, est))
    return ScanResult("separation", rows, _meta(ensemble, k, plan, block=block))


# --- exponential fit ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExpFit:
    """``a exp(-d / ell_fit) + b`` fitted by weighted least squares."""

    a: float
    b: float
    ell_fit: float
    covariance: np.ndarray
    residual_norm: float
    converged: bool = True

    @property
    def stderr(self) -> dict:
        s = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return {"a": float(s[0]), "ell_fit": float(s[1]), "b": float(s[2])}

    def __call__(self, d):
        return self.a * np.exp(-np.asarray(d, dtype=np.float64) / self.ell_fit) + self.b

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "ell_fit": self.ell_fit, "stderr": self.stderr,
                "covariance": self.covariance.tolist(), "residual_norm": self.residual_norm,
                "converged": self.converged}


def fit_exponential(d, y, stderr=None) -> ExpFit:
    """Weighted fit of ``a exp(-d/ell) + b``; weights are ``1 / stderr^2``."""
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d.size < 4 or d.size != y.size:
        raise ValidationError("exponential fit needs at least 4 (d, y) points")
    s = np.ones_like(y) if stderr is None else np.asarray(stderr, dtype=np.float64)
    if np.any(~(s > 0)):
        raise ValidationError("standard errors must be positive")
    if np.ptp(y) <= np.finfo(float).eps * max(np.max(np.abs(y)), np.finfo(float).tiny):
        raise DegenerateData("all values are equal; decay length is not identifiable")
    span = np.ptp(d)
    p0 = np.array([y.max() - y.min(), span / 3.0, y.min()])

    def resid(p):
        # trial steps with tiny or negative ell overflow; LM rejects them as non-finite
        with np.errstate(over="ignore", invalid="ignore"):
            return (p[0] * np.exp(-d / p[1]) + p[2] - y) / s

    def jac(p):
        e = np.exp(-d / p[1])
        return np.column_stack([e, p[0] * d * e / p[1] ** 2, np.ones_like(d)]) / s[:, None]

    res = levenberg_marquardt(resid, p0, jac, absolute_sigma=stderr is not None)
    a, ell, b = res.params
    if not ell > 0 or not np.isfinite(ell):
        raise FitDiverged(f"fitted decay length {ell} is not positive")
    cov = res.covariance[np.ix_([0, 1, 2], [0, 1, 2])]
    return ExpFit(float(a), float(b), float(ell), cov, res.residual_norm, res.converged)


def fit_separation(scan: ScanResult) -> ExpFit:
    if scan.scan_kind != "separation":
        raise ValidationError("expected a separation scan")
    return fit_exponential(scan.column("d_um"), scan.values, scan.stderrs)


# --- q and non-Gaussianity ------------------------------------------------------------

def _labelled(ensembles):
    out = []
    for item in ensembles:
        if isinstance(item, PhaseEnsemble):
            q = item.meta.get("params", {}).get("q")
            out.append((q, item))
        else:
            out.append((item[0], item[1]))
    return out


def q_scan(ensembles, k: int = 2, plan: JackknifePlan = None, partition: Partition = None) -> ScanResult:
    """MI between the last pixel and the remainder for each ensemble of a q sweep.

    ``ensembles`` holds ``(q, ensemble)`` pairs or ensembles carrying
    ``meta['params']['q']``.
    """
    items = sorted(_labelled(ensembles), key=lambda t: t[0])
    rows = []
    for q, ens in items:
        n = ens.n_pixels
        part = partition or Partition(range(n - 1), [n - 1], n)
        rows.append(ScanRow({"q": float(q), "coherence": mean_cos(ens)}, mi_estimate(ens, part, k, plan), part))
    return ScanResult("q", rows, _meta(items[0][1], k, plan))


def nongauss_scan(ensembles, k: int = 2, seed: int = 0, plan: JackknifePlan = None) -> ScanResult:
    """Relative entropy to the nearest Gaussian of each ensemble, indexed by coherence."""
    items = sorted(_labelled(ensembles), key=lambda t: t[0])
    rows = []
    for q, ens in items:
        rows.append(ScanRow({"q": float(q), "coherence": mean_cos(ens)}, kl_estimate(ens, k, seed, plan)))
    return ScanResult("nongauss", rows, _meta(items[0][1], k, plan, kl_seed=seed))


# --- trend tests ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrendTest:
    passed: bool
    statistic: float
    detail: dict


def plateau_test(scan: ScanResult, n_sigma: float = 2.0) -> TrendTest:
    """All pairs of points agree within ``n_sigma`` combined standard errors."""
    v, s = scan.values, scan.stderrs
    worst, pair = 0.0, None
    for i, j in itertools.combinations(range(len(v)), 2):
        z = abs(v[i] - v[j]) / math.hypot(s[i], s[j]) if s[i] or s[j] else math.inf * (v[i] != v[j])
        if z > worst:
            worst, pair = z, (i, j)
    return TrendTest(bool(worst <= n_sigma), float(worst), {"worst_pair": pair, "n_sigma": n_sigma})


def sublinearity_test(scan: ScanResult, confidence: float = 0.95) -> TrendTest:
    """Weighted regression of ``ln MI`` on ``ln boundary_count``: slope < 1 one-sided."""
    c = scan.column("boundary_count").astype(float)
    v, s = scan.values, scan.stderrs
    if np.any(v <= 0):
        raise DegenerateData("log-log regression needs positive MI values")
    x, y = np.log(c), np.log(v)
    w = (v / s) ** 2
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ X.T @ (w * y)
    resid = y - X @ beta
    dof = len(y) - 2
    # inflate by the residual scatter when it exceeds the jackknife errors
    chi2 = float(np.sum(w * resid**2))
    scale = max(1.0, chi2 / dof) if dof > 0 else 1.0
    se = math.sqrt(cov[1, 1] * scale)
    upper = beta[1] + stats.t.ppf(confidence, dof) * se
    return TrendTest(bool(upper < 1.0), float(beta[1]), {"slope_stderr": se, "upper_bound": float(upper),
                                                         "intercept": float(beta[0]), "chi2_per_dof": chi2 / max(dof, 1)})


def _disjoint(a: EstimateWithCI, b: EstimateWithCI) -> bool:
    return a.ci95[0] > b.ci95[1] or b.ci95[0] > a.ci95[1]


def monotone_decrease_test(scan: ScanResult) -> TrendTest:
    """No step increases with disjoint 95% intervals, and first exceeds last with disjoint intervals."""
    est = [r.estimate for r in scan.rows]
    bad = check_monotone([e.value for e in est], [e.ci95[0] for e in est], [e.ci95[1] for e in est],
                         increasing=False)
    first, last = est[0], est[-1]
    drop = first.value > last.value and _disjoint(first, last)
    return TrendTest(bool(not bad and drop), float(first.value - last.value), {"increasing_steps": bad, "end_drop_significant": drop})


def maximum_test(scan: ScanResult, index: int = 0) -> TrendTest:
    """Row ``index`` is the largest value; no other row exceeds it with disjoint intervals."""
    est = [r.estimate for r in scan.rows]
    top = int(np.argmax([e.value for e in est]))
    beaten = [i for i, e in enumerate(est) if i != index and e.value > est[index].value and _disjoint(e, est[index])]
    return TrendTest(bool(not beaten), float(top), {"argmax": top, "significantly_larger": beaten})


def peak(scan: ScanResult, key: str = "coherence") -> tuple:
    i = int(np.argmax(scan.values))
    return float(scan.rows[i].x[key]), scan.rows[i].estimate


# --- matching to a measured coherence -----------------------------------------------------

def interpolate_to_coherence(target, coherences: Sequence[EstimateWithCI], quantities: Sequence[EstimateWithCI]) -> EstimateWithCI:
    """Linear interpolation of a simulated quantity to a target coherence.

    The error combines, in quadrature, the interpolated jackknife error of
    the quantity, the target's coherence error times the local slope, and the
    interpolation spread (difference between the linear and the three-node
    quadratic interpolant), which vanishes on a node.
    """
    c = np.array([x.value for x in coherences])
    vals = np.array([x.value for x in quantities])
    errs = np.array([x.stderr for x in quantities])
    if np.any(np.diff(c) <= 0):
        raise ValidationError("node coherences must be strictly increasing")
    t_val = target.value if isinstance(target, EstimateWithCI) else float(target)
    t_err = target.stderr if isinstance(target, EstimateWithCI) else 0.0
    i, t = _bracket(t_val, c)
    value = (1 - t) * vals[i] + t * vals[i + 1]
    slope = (vals[i + 1] - vals[i]) / (c[i + 1] - c[i])
    jk = (1 - t) * errs[i] + t * errs[i + 1]
    spread = 0.0
    if c.size >= 3 and 0 < t < 1:
        j = [i - 1, i, i + 1] if i + 2 >= c.size or (i > 0 and t_val - c[i] < c[i + 1] - t_val) else [i, i + 1, i + 2]
        coef = np.polyfit(c[j], vals[j], 2)
        spread = abs(np.polyval(coef, t_val) - value)
    stderr = math.sqrt(jk**2 + (slope * t_err) ** 2 + spread**2)
    ref = quantities[i]
    return EstimateWithCI(float(value), float(stderr), units=ref.units, k=ref.k, method="match_simulation",
                          meta={"target_coherence": t_val, "bracket": [float(c[i]), float(c[i + 1])],
                                "jackknife_error": float(jk), "coherence_error": float(abs(slope) * t_err),
                                "interpolation_spread": float(spread)})


def match_simulation(target, lambda_T: float, quantity: Callable, q_grid: Sequence[float], n_samples: int = 2000,
                     seed: int = 0, config: PipelineConfig = PipelineConfig(), plan: JackknifePlan = None,
                     **param_kw) -> EstimateWithCI:
    """Simulate a q grid at fixed ``lambda_T``, evaluate ``quantity`` and interpolate to ``target``.

    ``quantity(ensemble) -> EstimateWithCI``.
    """
    coh, vals = [], []
    for i, q in enumerate(q_grid):
        ens = simulate_pipeline(SGParams.from_q(lambda_T, float(q), **param_kw), n_samples, seed + i, config)
        coh.append(coherence_factor(ens, plan))
        vals.append(quantity(ens))
    return interpolate_to_coherence(target, coh, vals)


def match_curve(target, curve: CoherenceCurve, quantities: Sequence[EstimateWithCI]) -> EstimateWithCI:
    """:func:`interpolate_to_coherence` against a precomputed coherence curve."""
    return interpolate_to_coherence(target, curve.coherence, quantities)
