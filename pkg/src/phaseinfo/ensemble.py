"""Phase-profile ensembles and the preprocessing applied before estimation.

An ensemble is an ``N_s x N_z`` matrix of relative-phase samples (radians)
on a uniform spatial grid (micrometres).  All operations here are pure:
they return new ensembles and never modify their input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySelection, IndivisibleGrid, InvalidPartition, ValidationError

TWO_PI = 2.0 * math.pi


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PhaseEnsemble:
    """Ensemble of phase profiles.

    Parameters
    ----------
    samples : array_like, shape (N_s, N_z)
        Phase values in radians, one row per shot.
    grid : array_like, shape (N_z,)
        Pixel centres in micrometres, strictly increasing and uniform.
    dz : float, optional
        Pixel pitch.  Inferred from ``grid`` when omitted.
    meta : dict, optional
        Provenance (source, seed, parameters, preprocessing ``history``).
    """

    samples: np.ndarray
    grid: np.ndarray
    dz: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim == 1:
            s = _frozen(s[None, :])
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValidationError(f"samples must be a non-empty 2D matrix, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("samples contain non-finite values")
        g = _frozen(self.grid)
        if g.shape != (s.shape[1],):
            raise ValidationError(f"grid has {g.size} points but samples have {s.shape[1]} columns")
        if g.size >= 2:
            steps = np.diff(g)
            if np.any(steps <= 0):
                raise ValidationError("grid must be strictly increasing")
            dz = float(steps.mean()) if self.dz is None else float(self.dz)
            if np.max(np.abs(steps - dz)) > 1e-9 * abs(dz):
                raise ValidationError("grid spacing is not uniform")
        else:
            if self.dz is None:
                raise ValidationError("dz is required for a single-pixel grid")
            dz = float(self.dz)
        if not dz > 0:
            raise ValidationError("dz must be positive")
        meta = dict(self.meta)
        meta.setdefault("history", [])
        meta["history"] = list(meta["history"])
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "dz", dz)
        object.__setattr__(self, "meta", meta)

    @classmethod
    def from_samples(cls, samples, dz: float = 1.0, z0: float = None, meta=None) -> "PhaseEnsemble":
        """Build an ensemble on a grid of pixel centres ``z0 + j*dz``."""
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        z0 = 0.5 * dz if z0 is None else z0
        grid = z0 + dz * np.arange(samples.shape[1])
        return cls(samples, grid, dz, dict(meta or {}))

    @property
    def n_shots(self) -> int:
        return self.samples.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.n_shots

    def derive(self, samples=None, grid=None, dz=None, step: dict = None, **meta_updates) -> "PhaseEnsemble":
        """New ensemble sharing provenance, with ``step`` appended to the history."""
        meta = {k: v for k, v in self.meta.items() if k != "history"}
        meta.update(meta_updates)
        meta["history"] = list(self.meta["history"]) + ([step] if step else [])
        return PhaseEnsemble(
            self.samples if samples is None else samples,
            self.grid if grid is None else grid,
            self.dz if dz is None else dz,
            meta,
        )

    def take_shots(self, idx) -> "PhaseEnsemble":
        idx = np.asarray(idx)
        return PhaseEnsemble(self.samples[idx], self.grid, self.dz, self.meta)

    def __getitem__(self, idx):
        return self.take_shots(idx)


@dataclass(frozen=True)
class Partition:
    """Two disjoint, non-empty sets of (coarse) pixel indices, 0-based."""

    axes_A: tuple
    axes_B: tuple
    n_pixels: int = None

    def __post_init__(self):
        a = tuple(sorted(int(i) for i in self.axes_A))
        b = tuple(sorted(int(i) for i in self.axes_B))
        if not a or not b:
            raise InvalidPartition("both subsystems must be non-empty")
        if len(set(a)) != len(a) or len(set(b)) != len(b):
            raise InvalidPartition("repeated pixel index inside a subsystem")
        overlap = set(a) & set(b)
        if overlap:
            raise InvalidPartition(f"subsystems overlap at pixels {sorted(overlap)}")
        lo = min(a[0], b[0])
        if lo < 0:
            raise InvalidPartition(f"negative pixel index {lo}")
        if self.n_pixels is not None and max(a[-1], b[-1]) >= self.n_pixels:
            raise InvalidPartition(
                f"pixel index {max(a[-1], b[-1])} out of range for {self.n_pixels} pixels"
            )
        object.__setattr__(self, "axes_A", a)
        object.__setattr__(self, "axes_B", b)

    @classmethod
    def from_labels(cls, labels_A: Iterable[int], labels_B: Iterable[int], n_pixels: int = None) -> "Partition":
        """Build from 1-based pixel labels (``z~_1`` is label 1)."""
        return cls(tuple(i - 1 for i in labels_A), tuple(i - 1 for i in labels_B), n_pixels)

    @property
    def boundary_count(self) -> int:
        """Adjacent pixel pairs with one member in A and the other in B."""
        a, b = set(self.axes_A), set(self.axes_B)
        return sum(1 for j in a if (j + 1) in b) + sum(1 for j in b if (j + 1) in a)

    @property
    def dim(self) -> int:
        return len(self.axes_A) + len(self.axes_B)

    def swapped(self) -> "Partition":
        return Partition(self.axes_B, self.axes_A, self.n_pixels)

    def validate_for(self, n_pixels: int) -> None:
        top = max(self.axes_A[-1], self.axes_B[-1])
        if top >= n_pixels:
            raise InvalidPartition(f"pixel index {top} out of range for {n_pixels} pixels")

    def labels(self) -> dict:
        return {"A": [i + 1 for i in self.axes_A], "B": [i + 1 for i in self.axes_B]}


@dataclass(frozen=True, eq=False)
class DataCloud:
    """``N_s`` points in ``D`` dimensions; the first ``n_a`` columns form subspace A."""

    points: np.ndarray
    n_a: int

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2:
            raise ValidationError("points must be a 2D matrix")
        if not 0 <= self.n_a <= p.shape[1]:
            raise ValidationError(f"n_a={self.n_a} incompatible with D={p.shape[1]}")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def split(self) -> tuple:
        return ("A",) * self.n_a + ("B",) * (self.dim - self.n_a)

    @property
    def scale(self) -> np.ndarray:
        """Per-axis data range."""
        return np.ptp(self.points, axis=0)

    @property
    def a(self) -> np.ndarray:
        return self.points[:, : self.n_a]

    @property
    def b(self) -> np.ndarray:
        return self.points[:, self.n_a :]

    def swapped(self) -> "DataCloud":
        return DataCloud(np.hstack([self.b, self.a]), self.dim - self.n_a)

    def take(self, idx) -> "DataCloud":
        return DataCloud(self.points[np.asarray(idx)], self.n_a)

    def __len__(self):
        return self.n_samples

    def __getitem__(self, idx):
        return self.take(idx)

    def jittered(self, seed: int, amplitude: float = 1e-10) -> "DataCloud":
        """Copy with seeded uniform noise of ``amplitude * range`` per axis."""
        rng = np.random.default_rng(seed)
        scale = np.where(self.scale > 0, self.scale, 1.0)
        noise = rng.uniform(-1.0, 1.0, size=self.points.shape) * amplitude * scale
        return DataCloud(self.points + noise, self.n_a)

    @classmethod
    def from_arrays(cls, a, b) -> "DataCloud":
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        a = a[:, None] if a.ndim == 1 else a
        b = b[:, None] if b.ndim == 1 else b
        return cls(np.hstack([a, b]), a.shape[1])


# --- operations ----------------------------------------------------------------

def wrap_phase(x):
    """Map phases into (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    y = x - TWO_PI * np.ceil((x - math.pi) / TWO_PI)
    # the division can round across a turn boundary
    y = np.where(y <= -math.pi, y + TWO_PI, y)
    return np.where(y > math.pi, y - TWO_PI, y)


def unwrap_profile(raw: Sequence[float]) -> np.ndarray:
    """Unwrap a profile of phases given in (-pi, pi].

    Every neighbour difference is brought into (-pi, pi] by adding a whole
    number of turns; the first pixel is kept as is.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size < 2:
        return raw.copy()
    d = np.diff(raw)
    turns = -np.ceil((d - math.pi) / TWO_PI)
    shift = np.concatenate([[0.0], np.cumsum(turns)])
    return raw + TWO_PI * shift


def reduce_global_offset(ensemble: PhaseEnsemble, lower: float = 0.0) -> PhaseEnsemble:
    """Shift each profile by whole turns so its spatial mean lies in ``[lower, lower + 2 pi)``."""
    x = ensemble.samples
    mean = x.mean(axis=1)
    n = -np.floor((mean - lower) / TWO_PI)
    out = x + TWO_PI * n[:, None]
    # guard against rounding at the window edges
    m2 = out.mean(axis=1)
    fix = -np.floor((m2 - lower) / TWO_PI)
    if np.any(fix != 0):
        out = out + TWO_PI * fix[:, None]
    return ensemble.derive(out, step={"op": "reduce_global_offset", "lower": float(lower)})


def coarse_grain(ensemble: PhaseEnsemble, target_nz: int) -> PhaseEnsemble:
    """Average contiguous equal blocks down to ``target_nz`` pixels."""
    nz = ensemble.n_pixels
    target_nz = int(target_nz)
    if target_nz < 1 or nz % target_nz:
        raise IndivisibleGrid(f"cannot coarse-grain {nz} pixels into {target_nz} equal blocks")
    f = nz // target_nz
    x = ensemble.samples.reshape(ensemble.n_shots, target_nz, f).mean(axis=2)
    grid = ensemble.grid.reshape(target_nz, f).mean(axis=1)
    factor = ensemble.meta.get("coarse_factor", 1) * f
    return ensemble.derive(
        x, grid, ensemble.dz * f, step={"op": "coarse_grain", "factor": f}, coarse_factor=factor
    )


def central_slice(n_pixels: int, fraction: float) -> slice:
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    keep = int(round(fraction * n_pixels))
    if keep < 1:
        raise EmptySelection(f"central fraction {fraction} of {n_pixels} pixels is empty")
    start = (n_pixels - keep) // 2
    return slice(start, start + keep)


def select_central(ensemble: PhaseEnsemble, fraction: float) -> PhaseEnsemble:
    """Keep the centred contiguous block of ``round(fraction * N_z)`` pixels."""
    sl = central_slice(ensemble.n_pixels, fraction)
    return ensemble.derive(
        ensemble.samples[:, sl],
        ensemble.grid[sl],
        step={"op": "select_central", "fraction": float(fraction), "start": sl.start, "stop": sl.stop},
    )


def mean_cos(x) -> float:
    x = x.samples if isinstance(x, PhaseEnsemble) else np.asarray(x)
    return float(np.cos(x).mean())


def coherence_factor(ensemble: PhaseEnsemble, plan=None):
    """Coherence factor ``<cos phi>`` over all shots and pixels, with jackknife CI."""
    from .resampling import JackknifePlan, jackknife

    plan = plan or JackknifePlan()
    est = jackknife(lambda e: mean_cos(e.samples), ensemble, plan, min_samples=1)
    return est.with_method("coherence_factor")


def build_cloud(ensemble: PhaseEnsemble, partition: Partition) -> DataCloud:
    """One point per shot; columns are A pixels (ascending) then B pixels (ascending)."""
    partition.validate_for(ensemble.n_pixels)
    cols = list(partition.axes_A) + list(partition.axes_B)
    return DataCloud(ensemble.samples[:, cols], len(partition.axes_A))
