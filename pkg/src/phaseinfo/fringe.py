"""Synthetic interferograms and per-slice fringe fitting.

Each z slice of a time-of-flight interference image is modelled as

    f(x) = A exp(-(x - x0)^2 / sigma^2) [1 + C cos(2 pi (x - x0) / lambda_F - phi)] + B,

and the relative phase ``phi`` of the slice is read off the fit.  Collecting
``phi`` along z and unwrapping gives one phase profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import TWO_PI, PhaseEnsemble, unwrap_profile, wrap_phase
from .errors import FitDiverged, LowContrast, TooManyBadSlices, ValidationError
from .lsq import levenberg_marquardt

PARAM_NAMES = ("A", "B", "C", "lambda_F", "x0", "sigma_TOF", "phi")
MIN_CONTRAST = 0.05
MAX_BAD_FRACTION = 0.2


def fringe_model(x, A, B, C, lambda_F, x0, sigma_TOF, phi):
    u = np.asarray(x, dtype=np.float64) - x0
    return A * np.exp(-(u * u) / sigma_TOF**2) * (1.0 + C * np.cos(TWO_PI * u / lambda_F - phi)) + B


@dataclass(frozen=True, eq=False)
class Interferogram:
    """Counts on an ``N_z x N_x`` grid; ``truth`` holds per-slice parameters of synthetic images."""

    image: np.ndarray
    x_grid: np.ndarray
    z_grid: np.ndarray = None
    truth: dict = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        img = np.array(self.image, dtype=np.float64, ndmin=2)
        x = np.asarray(self.x_grid, dtype=np.float64)
        if img.shape[1] != x.size:
            raise ValidationError(f"image has {img.shape[1]} columns, x grid has {x.size}")
        if not np.all(np.isfinite(img)) or np.any(img < 0):
            raise ValidationError("counts must be finite and non-negative")
        z = np.arange(img.shape[0]) * 2.0 + 1.0 if self.z_grid is None else np.asarray(self.z_grid, dtype=np.float64)
        if z.size != img.shape[0]:
            raise ValidationError("z grid does not match the number of slices")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "z_grid", z)

    @property
    def n_slices(self) -> int:
        return self.image.shape[0]


def _broadcast_truth(truth: dict, n: int = None) -> dict:
    missing = set(PARAM_NAMES) - set(truth)
    if missing:
        raise ValidationError(f"missing slice parameters {sorted(missing)}")
    if n is None:
        n = max(np.size(truth[k]) for k in PARAM_NAMES)
    out = {}
    for k in PARAM_NAMES:
        v = np.asarray(truth[k], dtype=np.float64)
        if v.size not in (1, n):
            raise ValidationError(f"parameter {k} has {v.size} entries, expected 1 or {n}")
        out[k] = np.broadcast_to(v.ravel() if v.size > 1 else v.reshape(()), (n,)).copy()
    if np.any(out["sigma_TOF"] <= 0) or np.any(out["lambda_F"] <= 0):
        raise ValidationError("sigma_TOF and lambda_F must be positive")
    if np.any(out["C"] < 0) or np.any(out["C"] > 1):
        raise ValidationError("contrast must lie in [0, 1]")
    return out


def synthesize(truth: dict, x_grid, noise: float = 0.0, seed: int = 0, z_grid=None,
               poisson: bool = False) -> Interferogram:
    """Evaluate the fringe model slice by slice and add noise.

    ``truth`` maps each name in :data:`PARAM_NAMES` to a scalar or a per-slice
    array.  ``noise`` is the standard deviation of additive Gaussian noise in
    counts; with ``poisson=True`` counts are Poisson-distributed instead.
    The result is clamped at zero.
    """
    t = _broadcast_truth(truth)
    x = np.asarray(x_grid, dtype=np.float64)
    phi = np.asarray(t["phi"])
    img = fringe_model(
        x[None, :], t["A"][:, None], t["B"][:, None], t["C"][:, None], t["lambda_F"][:, None],
        t["x0"][:, None], t["sigma_TOF"][:, None], phi[:, None],
    )
    rng = np.random.default_rng(seed)
    if poisson:
        img = rng.poisson(np.clip(img, 0, None)).astype(np.float64)
    elif noise > 0:
        img = img + noise * rng.standard_normal(img.shape)
    img = np.clip(img, 0.0, None)
    return Interferogram(img, x, z_grid, t, {"noise": noise, "seed": seed, "poisson": poisson})


@dataclass(frozen=True, eq=False)
class SliceFit:
    A: float
    B: float
    C: float
    lambda_F: float
    x0: float
    sigma_TOF: float
    phi: float
    covariance: np.ndarray
    converged: bool
    residual_norm: float = math.nan
    initial_residual_norm: float = math.nan

    @property
    def params(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    @property
    def stderr(self) -> dict:
        s = np.sqrt(np.clip(np.diag(self.covariance), 0, None))
        return dict(zip(PARAM_NAMES, map(float, s)))

    @property
    def phi_stderr(self) -> float:
        return self.stderr["phi"]

    def model(self, x) -> np.ndarray:
        return fringe_model(x, *self.params)


def initial_guess(counts: np.ndarray, x: np.ndarray, lambda_F: float = None) -> np.ndarray:
    """Moments for the envelope, dominant spatial frequency for the fringes."""
    dx = float(np.median(np.diff(x)))
    B = float(np.percentile(counts, 5))
    w = np.clip(counts - B, 0.0, None)
    if w.sum() <= 0:
        raise FitDiverged("slice carries no signal above background")
    x0 = float(np.sum(w * x) / w.sum())
    var = float(np.sum(w * (x - x0) ** 2) / w.sum())
    sigma = math.sqrt(2.0 * max(var, dx * dx))
    A = float(w.sum() * dx / (sigma * math.sqrt(math.pi)))
    env = A * np.exp(-((x - x0) ** 2) / sigma**2)
    inside = env > 0.2 * A
    s = (counts - B) / np.where(inside, env, 1.0) - 1.0
    weight = np.where(inside, env / A, 0.0)
    u = x - x0
    if lambda_F is None:
        span = float(np.ptp(x[inside])) if inside.sum() > 1 else float(np.ptp(x))
        freqs = np.linspace(1.0 / max(span, dx), 0.5 / dx, 512)
    else:
        freqs = np.array([1.0 / lambda_F])
    Z = (weight * s) @ np.exp(-2j * np.pi * np.outer(u, freqs))
    best = int(np.argmax(np.abs(Z)))
    C = float(np.clip(2.0 * np.abs(Z[best]) / weight.sum(), 0.05, 1.0))
    phi = float(-np.angle(Z[best]))
    return np.array([A, B, C, 1.0 / freqs[best], x0, sigma, phi])


def _canonical(p: np.ndarray) -> np.ndarray:
    A, B, C, lam, x0, sig, phi = p
    if lam < 0:
        lam, phi = -lam, -phi
    if C < 0:
        C, phi = -C, phi + math.pi
    return np.array([A, B, C, lam, x0, abs(sig), wrap_phase(phi)])


def fit_slice(counts, x_grid, lambda_F: float = None) -> SliceFit:
    """Least-squares fit of the fringe model to one slice.

    With ``lambda_F`` given the fringe spacing is held fixed (global mode).
    The parameter covariance is scaled by the residual variance.  Raises
    :class:`LowContrast` (carrying the fit) when the fitted contrast is below
    0.05, not significant at two standard errors, or the fringe spacing
    exceeds the image width, since the phase is then not meaningful.
    """
    y = np.asarray(counts, dtype=np.float64)
    x = np.asarray(x_grid, dtype=np.float64)
    if y.size < 8 or y.size != x.size:
        raise ValidationError("a slice needs at least 8 pixels matching the x grid")
    p0 = initial_guess(y, x, lambda_F)
    free = [i for i in range(7) if not (lambda_F is not None and i == 3)]

    def full(q):
        p = p0.copy()
        p[free] = q
        return p

    def resid(q):
        return fringe_model(x, *full(q)) - y

    def jac(q):
        A, B, C, lam, x0, sig, phi = full(q)
        u = x - x0
        g = np.exp(-(u * u) / sig**2)
        arg = TWO_PI * u / lam - phi
        c, s = np.cos(arg), np.sin(arg)
        core = 1.0 + C * c
        cols = [
            g * core,
            np.ones_like(x),
            A * g * c,
            A * g * C * s * TWO_PI * u / lam**2,
            A * g * (2 * u / sig**2 * core + C * s * TWO_PI / lam),
            A * g * core * 2 * u * u / sig**3,
            A * g * C * s,
        ]
        return np.column_stack([cols[i] for i in free])

    res = levenberg_marquardt(resid, p0[free], jac, absolute_sigma=False)
    raw = full(res.params)
    p = _canonical(raw)
    cov = np.zeros((7, 7))
    idx = np.ix_(free, free)
    cov[idx] = res.covariance
    if not np.all(np.isfinite(p)):
        raise FitDiverged("fit returned non-finite parameters")
    fit = SliceFit(*map(float, p), covariance=cov, converged=res.converged,
                   residual_norm=res.residual_norm, initial_residual_norm=res.initial_residual_norm)
    if p[2] < MIN_CONTRAST:
        raise LowContrast(f"fitted contrast {p[2]:.3g} below {MIN_CONTRAST}", fit)
    # without visible fringes the fit can trade the envelope for a fringe
    # longer than the image; such a phase carries no information either
    if p[3] > np.ptp(x) or p[2] < 2.0 * fit.stderr["C"]:
        raise LowContrast(f"fringes not resolved (lambda_F={p[3]:.3g}, C={p[2]:.3g} +/- {fit.stderr['C']:.2g})", fit)
    return fit


def extract_profile(image: Interferogram, lambda_F: float = None,
                    max_bad_fraction: float = MAX_BAD_FRACTION) -> PhaseEnsemble:
    """Fit every slice and return the unwrapped phase profile as a one-shot ensemble.

    Slices whose fit fails or has low contrast are flagged; they are filled
    by linear interpolation of the unwrapped phase of the neighbouring good
    slices (nearest good slice at the ends).  ``meta`` carries the flags and
    the per-slice phase errors.
    """
    n = image.n_slices
    phi = np.full(n, np.nan)
    err = np.full(n, np.nan)
    bad = []
    for j in range(n):
        try:
            f = fit_slice(image.image[j], image.x_grid, lambda_F)
        except (LowContrast, FitDiverged):
            bad.append(j)
            continue
        phi[j] = f.phi
        err[j] = f.phi_stderr
    if len(bad) > max_bad_fraction * n:
        raise TooManyBadSlices(f"{len(bad)} of {n} slices could not be fitted reliably")
    good = np.flatnonzero(np.isfinite(phi))
    unwrapped = np.empty(n)
    unwrapped[good] = unwrap_profile(phi[good])
    if bad:
        unwrapped[bad] = np.interp(bad, good, unwrapped[good])
    dz = float(image.z_grid[1] - image.z_grid[0]) if n > 1 else 1.0
    meta = {"source": "fringe_fit", "bad_slices": bad, "phi_stderr": err.tolist(), "lambda_F": lambda_F}
    return PhaseEnsemble(unwrapped[None, :], image.z_grid, dz, meta)


def extract_ensemble(images, lambda_F: float = None) -> PhaseEnsemble:
    """Stack :func:`extract_profile` over several shots."""
    rows = [extract_profile(img, lambda_F) for img in images]
    first = rows[0]
    samples = np.vstack([r.samples for r in rows])
    meta = {"source": "fringe_fit", "bad_slices": [r.meta["bad_slices"] for r in rows],
            "phi_stderr": [r.meta["phi_stderr"] for r in rows], "lambda_F": lambda_F}
    return PhaseEnsemble(samples, first.grid, first.dz, meta)
