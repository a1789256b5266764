"""Classical thermal sine-Gordon ensembles of the relative phase.

The Boltzmann weight of a discretised profile ``phi_j`` (spacing ``dz``) is
``exp(-S)`` with

    S = sum_j (lambda_T / 8) (phi_{j+1} - phi_j)^2 / dz
      + sum_j dz (q^2 / (4 lambda_T)) (1 - cos phi_j),

which is ``H_SG / k_B T`` after the Gaussian density sector is integrated
out.  Lengths are in micrometres.  Two samplers target this weight:

* :func:`sample_transfer` -- exact Markov sampling along z with a transfer
  operator on a discretised phase grid (forward filter, backward sample);
* :func:`sample_metropolis` -- single-site random-walk Metropolis, used as an
  independent oracle.

:func:`simulate_pipeline` then applies the same preparation as for measured
data (interpolation to camera pixels, PSF blur, central cut, removal of the
global 2 pi offset, coarse graining).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy import constants
from scipy.ndimage import gaussian_filter1d

from .ensemble import (
    TWO_PI,
    PhaseEnsemble,
    coarse_grain,
    coherence_factor,
    reduce_global_offset,
    select_central,
)
from .errors import NonMonotoneCurve, OperatorUnderflow, OutOfRange, ValidationError
from .estimators import EstimateWithCI
from .resampling import JackknifePlan

log = logging.getLogger(__name__)

HBAR = constants.hbar
KB = constants.k
M_RB87 = 86.909180527 * constants.atomic_mass
UM = 1e-6


def coupling_length(J: float) -> float:
    """``ell_J = sqrt(hbar / (4 m J))`` in micrometres for a tunnelling rate in 1/s."""
    return math.sqrt(HBAR / (4.0 * M_RB87 * J)) / UM


def tunnelling_rate(ell_J: float) -> float:
    return HBAR / (4.0 * M_RB87 * (ell_J * UM) ** 2)


def thermal_length(T_nK: float, n_1D: float) -> float:
    """``lambda_T = 2 hbar^2 n_1D / (m k_B T)`` in micrometres (``n_1D`` in 1/um)."""
    return 2.0 * HBAR**2 * (n_1D / UM) / (M_RB87 * KB * T_nK * 1e-9) / UM


def temperature(lambda_T: float, n_1D: float) -> float:
    """Inverse of :func:`thermal_length`, in nK."""
    return 2.0 * HBAR**2 * (n_1D / UM) / (M_RB87 * KB * lambda_T * UM) / 1e-9


@dataclass(frozen=True)
class SGParams:
    """Parameters of the thermal sine-Gordon measure.

    Construct with :meth:`from_q` or :meth:`from_physical`; ``J`` (1/s) and
    ``T`` (nK) are filled in from the length scales when not given.
    ``g_1D`` is carried for provenance only; the phase marginal does not
    depend on it.
    """

    lambda_T: float
    ell_J: float = math.inf
    L: float = 120.0
    n_grid: int = 150
    sigma_PSF: float = 3.0
    n_1D: float = 70.0
    g_1D: float = None
    J: float = None
    T: float = None

    def __post_init__(self):
        if not self.lambda_T > 0:
            raise ValidationError("lambda_T must be positive")
        if not self.ell_J > 0:
            raise ValidationError("ell_J must be positive (inf for the massless case)")
        if not self.L > 0:
            raise ValidationError("L must be positive")
        if int(self.n_grid) < 2:
            raise ValidationError("n_grid must be >= 2")
        if self.sigma_PSF < 0:
            raise ValidationError("sigma_PSF must be >= 0")
        J = 0.0 if math.isinf(self.ell_J) else tunnelling_rate(self.ell_J)
        T = temperature(self.lambda_T, self.n_1D)
        for name, given, derived in (("J", self.J, J), ("T", self.T, T)):
            if given is not None and not math.isclose(given, derived, rel_tol=1e-9, abs_tol=1e-300):
                raise ValidationError(f"{name}={given} inconsistent with length scales ({derived})")
        object.__setattr__(self, "n_grid", int(self.n_grid))
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "T", T)

    @classmethod
    def from_q(cls, lambda_T: float, q: float, **kw) -> "SGParams":
        if q < 0:
            raise ValidationError("q must be >= 0")
        ell_J = math.inf if q == 0 else lambda_T / q
        return cls(lambda_T=lambda_T, ell_J=ell_J, **kw)

    @classmethod
    def from_physical(cls, T_nK: float, J: float, n_1D: float = 70.0, **kw) -> "SGParams":
        ell_J = math.inf if J == 0 else coupling_length(J)
        return cls(lambda_T=thermal_length(T_nK, n_1D), ell_J=ell_J, n_1D=n_1D, **kw)

    @property
    def q(self) -> float:
        return 0.0 if math.isinf(self.ell_J) else self.lambda_T / self.ell_J

    @property
    def dz(self) -> float:
        """Simulation grid spacing; sites sit at cell centres ``(j + 1/2) dz``."""
        return self.L / self.n_grid

    @property
    def grid(self) -> np.ndarray:
        return (np.arange(self.n_grid) + 0.5) * self.dz

    @property
    def gradient_coeff(self) -> float:
        return self.lambda_T / 8.0

    @property
    def potential_coeff(self) -> float:
        return self.q**2 / (4.0 * self.lambda_T)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["q"] = self.q
        if math.isinf(d["ell_J"]):
            d["ell_J"] = "inf"
        return d


def dimensionless_action(profile, params: SGParams) -> np.ndarray:
    """``beta H`` of one profile (or a stack of profiles along the last axis)."""
    phi = np.asarray(profile, dtype=np.float64)
    if phi.shape[-1] != params.n_grid:
        raise ValidationError(f"profile has {phi.shape[-1]} sites, params expect {params.n_grid}")
    dz = params.dz
    grad = params.gradient_coeff * np.sum(np.diff(phi, axis=-1) ** 2, axis=-1) / dz
    pot = dz * params.potential_coeff * np.sum(1.0 - np.cos(phi), axis=-1)
    return grad + pot


# --- transfer operator -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransferOperator:
    """One-step kernel on a ring of ``M`` phase values covering ``2 W pi``.

    Differences are taken by minimum image on the ring, which is exact for
    the infinite line as long as one step never moves by ``W pi`` (the
    Gaussian weight of such a jump underflows to zero anyway).
    ``half_site`` is ``exp(-dz V / 2)``, the endpoint potential share not
    already inside ``kernel``.
    """

    phi_grid: np.ndarray
    kernel: np.ndarray
    half_site: np.ndarray
    step: float
    windings: int

    @property
    def M(self) -> int:
        return self.phi_grid.size

    @property
    def spacing(self) -> float:
        return self.windings * TWO_PI / self.M


def build_transfer_operator(params: SGParams, M: int = 512, W: int = 8, dz: float = None) -> TransferOperator:
    """Symmetric-split kernel ``exp[-(lambda_T/8)(phi - phi')^2/dz - dz (V(phi) + V(phi'))/2]``."""
    if M < 64:
        raise ValidationError("M must be >= 64")
    if W < 2:
        raise ValidationError("W must be >= 2")
    dz = params.dz if dz is None else float(dz)
    h = W * TWO_PI / M
    phi = -W * math.pi + h * np.arange(M)
    diff = phi[:, None] - phi[None, :]
    diff = (diff + W * math.pi) % (W * TWO_PI) - W * math.pi
    half_pot = 0.5 * dz * params.potential_coeff * (1.0 - np.cos(phi))
    log_k = -params.gradient_coeff * diff**2 / dz - half_pot[:, None] - half_pot[None, :]
    # far-off-diagonal weights underflow; keep them strictly positive
    kernel = np.maximum(np.exp(log_k), np.finfo(np.float64).tiny)
    kernel = 0.5 * (kernel + kernel.T)
    return TransferOperator(phi, kernel, np.exp(-half_pot), dz, int(W))


def _ensemble_meta(params: SGParams, sampler: str, seed, **extra) -> dict:
    meta = {"source": "simulation", "sampler": sampler, "seed": seed, "params": params.as_dict(), "units": "rad"}
    meta.update(extra)
    return meta


def sample_transfer(params: SGParams, op: TransferOperator, n_samples: int, seed: int) -> PhaseEnsemble:
    """Exact samples of the discretised measure by backward sampling along z.

    Backward vectors ``v_n = w``, ``v_j = K v_{j+1}`` (renormalised each step)
    give the first-site law ``w v_1`` and the transitions
    ``phi_{j+1} | phi_j  ~  K(phi_j, .) v_{j+1}``, with ``w`` the endpoint
    half-site weight.  Phases are drawn per grid cell and dithered uniformly
    within the cell.  Each profile is returned with its first site in
    ``[-pi, pi)``.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    n = params.n_grid
    M = op.M
    K = op.kernel
    vs = np.empty((n, M))
    v = op.half_site.copy()
    for j in range(n - 1, -1, -1):
        top = v.max()
        if not np.isfinite(top) or top <= 0:
            raise OperatorUnderflow(f"backward vector vanished at site {j}")
        vs[j] = v / top
        if j:
            v = K @ vs[j]
    rng = np.random.default_rng(seed)
    p0 = op.half_site * vs[0]
    c0 = np.cumsum(p0)
    idx = np.minimum(np.searchsorted(c0 / c0[-1], rng.random(n_samples), side="right"), M - 1)
    steps = np.empty((n_samples, n), dtype=np.int64)
    steps[:, 0] = 0
    offsets = np.arange(M, dtype=np.float64)[:, None]
    start = idx.copy()
    for j in range(1, n):
        cdf = np.cumsum(K * vs[j][None, :], axis=1)
        total = cdf[:, -1:]
        if np.any(~(total > 0)) or not np.all(np.isfinite(total)):
            raise OperatorUnderflow(f"transition weights vanished at site {j}")
        flat = (cdf / total + offsets).ravel()
        u = rng.random(n_samples)
        new = np.searchsorted(flat, idx + u, side="right") - idx * M
        new = np.clip(new, 0, M - 1)
        steps[:, j] = (new - idx + M // 2) % M - M // 2
        idx = new
    h = op.spacing
    path = op.phi_grid[start][:, None] + h * np.cumsum(steps, axis=1)
    path = path + h * (rng.random(path.shape) - 0.5)
    # global gauge: whole turns chosen so the first site lies in [-pi, pi)
    turns = np.floor((path[:, 0] + math.pi) / TWO_PI)
    path = path - TWO_PI * turns[:, None]
    meta = _ensemble_meta(params, "transfer", seed, M=M, W=op.windings)
    return PhaseEnsemble(path, params.grid, params.dz, meta)


# --- Metropolis oracle -------------------------------------------------------------

@numba.njit(cache=True)
def _metropolis_chains(n_chains, n_sites, a, b, dz, width, burn_in, thin, per_chain, seed):
    np.random.seed(seed)
    out = np.empty((n_chains * per_chain, n_sites))
    phi = np.zeros(n_sites)
    accepted = 0
    proposed = 0
    for c in range(n_chains):
        for s in range(n_sites):
            phi[s] = 0.0
        total = burn_in + (per_chain - 1) * thin + 1
        taken = 0
        for sweep in range(total):
            for s in range(n_sites):
                old = phi[s]
                new = old + width * np.random.standard_normal()
                d = dz * b * (math.cos(old) - math.cos(new))
                if s > 0:
                    l = phi[s - 1]
                    d += a * ((new - l) ** 2 - (old - l) ** 2) / dz
                if s < n_sites - 1:
                    r = phi[s + 1]
                    d += a * ((r - new) ** 2 - (r - old) ** 2) / dz
                proposed += 1
                if d <= 0.0 or np.random.random() < math.exp(-d):
                    phi[s] = new
                    accepted += 1
            if sweep >= burn_in and (sweep - burn_in) % thin == 0 and taken < per_chain:
                out[c * per_chain + taken] = phi
                taken += 1
    return out, accepted / max(proposed, 1)


def sample_metropolis(params: SGParams, n_samples: int, seed: int, burn_in: int = 2000, thin: int = 20,
                      width: float = None, n_chains: int = None) -> PhaseEnsemble:
    """Random-walk Metropolis samples of the same measure as :func:`sample_transfer`.

    Runs ``n_chains`` independent chains from the flat profile (default: one
    chain per requested sample) and records every ``thin``-th sweep after
    ``burn_in`` sweeps.  Endpoints are free.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    n_chains = n_samples if n_chains is None else int(n_chains)
    per_chain = -(-n_samples // n_chains)
    dz = params.dz
    if width is None:
        width = 2.4 * math.sqrt(2.0 * dz / params.lambda_T)
    raw, rate = _metropolis_chains(
        n_chains, params.n_grid, params.gradient_coeff, params.potential_coeff, dz,
        float(width), int(burn_in), int(thin), per_chain, int(seed) % (2**32),
    )
    raw = raw[:n_samples]
    raw = raw - TWO_PI * np.floor((raw[:, :1] + math.pi) / TWO_PI)
    log.info("metropolis acceptance rate %.3f (q=%.3g, lambda_T=%.3g)", rate, params.q, params.lambda_T)
    meta = _ensemble_meta(
        params, "metropolis", seed, burn_in=burn_in, thin=thin, width=width, n_chains=n_chains,
        acceptance_rate=rate,
    )
    return PhaseEnsemble(raw, params.grid, params.dz, meta)


# --- measurement chain -------------------------------------------------------------

def apply_psf(ensemble: PhaseEnsemble, sigma: float) -> PhaseEnsemble:
    """Gaussian blur of width ``sigma`` (um) along z with reflecting edges."""
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if sigma == 0:
        out = ensemble.samples
    else:
        out = gaussian_filter1d(ensemble.samples, sigma / ensemble.dz, axis=1, mode="reflect")
    return ensemble.derive(out, step={"op": "apply_psf", "sigma": float(sigma)})


def resample_grid(ensemble: PhaseEnsemble, n_pixels: int, length: float) -> PhaseEnsemble:
    """Linear interpolation onto ``n_pixels`` cell centres spanning ``[0, length]``."""
    dz = length / n_pixels
    target = (np.arange(n_pixels) + 0.5) * dz
    src = ensemble.grid
    pos = np.clip(np.searchsorted(src, target) - 1, 0, src.size - 2)
    w = np.clip((target - src[pos]) / (src[pos + 1] - src[pos]), 0.0, 1.0)
    x = ensemble.samples
    out = x[:, pos] * (1.0 - w) + x[:, pos + 1] * w
    return ensemble.derive(out, target, dz, step={"op": "interpolate", "n_pixels": int(n_pixels)})


@dataclass(frozen=True)
class PipelineConfig:
    """Measurement-chain settings applied to raw simulated profiles."""

    pixel: float = 2.0
    central_fraction: float = 0.5
    coarse_nz: int = 6
    offset_lower: float = -math.pi
    M: int = 512
    W: int = 8


def prepare(raw: PhaseEnsemble, params: SGParams, config: PipelineConfig = PipelineConfig()) -> PhaseEnsemble:
    n_pix = int(round(params.L / config.pixel))
    ens = resample_grid(raw, n_pix, params.L)
    ens = apply_psf(ens, params.sigma_PSF)
    ens = select_central(ens, config.central_fraction)
    ens = reduce_global_offset(ens, config.offset_lower)
    if config.coarse_nz:
        ens = coarse_grain(ens, config.coarse_nz)
    return ens


def simulate_pipeline(params: SGParams, n_samples: int, seed: int,
                      config: PipelineConfig = PipelineConfig()) -> PhaseEnsemble:
    """Sample, then interpolate to camera pixels, blur, cut, fix offsets and coarse-grain.

    With the defaults this is 150 sites over 120 um, 60 pixels of 2 um,
    a 3 um PSF, the central 30 pixels and 6 coarse pixels of 10 um.
    Set ``config.coarse_nz = None`` to stop before coarse graining.
    """
    op = build_transfer_operator(params, config.M, config.W)
    raw = sample_transfer(params, op, n_samples, seed)
    return prepare(raw, params, config)


# --- coherence curve -----------------------------------------------------------------

@dataclass
class CoherenceCurve:
    lambda_T: float
    q: np.ndarray
    coherence: list
    ensembles: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.coherence])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([c.stderr for c in self.coherence])

    def rows(self) -> list:
        return [
            {"q": float(q), "coherence": c.value, "stderr": c.stderr, "ci95_lo": c.ci95[0], "ci95_hi": c.ci95[1]}
            for q, c in zip(self.q, self.coherence)
        ]


def check_monotone(values, ci_lo, ci_hi, increasing: bool = True) -> list:
    """Indices ``i`` where step ``i -> i+1`` goes the wrong way with disjoint 95% intervals."""
    bad = []
    for i in range(len(values) - 1):
        if increasing and values[i + 1] < values[i] and ci_hi[i + 1] < ci_lo[i]:
            bad.append(i)
        if not increasing and values[i + 1] > values[i] and ci_lo[i + 1] > ci_hi[i]:
            bad.append(i)
    return bad


def coherence_curve(lambda_T: float, q_grid: Sequence[float], n_samples: int, seed: int,
                    config: PipelineConfig = PipelineConfig(), plan: JackknifePlan = None,
                    keep_ensembles: bool = False, **param_kw) -> CoherenceCurve:
    """``<cos phi>`` of the prepared ensemble over a grid of ``q`` at fixed ``lambda_T``."""
    q_grid = np.asarray(q_grid, dtype=np.float64)
    if q_grid.size < 2 or np.any(np.diff(q_grid) <= 0) or q_grid[0] < 0:
        raise ValidationError("q_grid must be strictly increasing and non-negative")
    plan = plan or JackknifePlan(seed=seed)
    coh, ensembles = [], []
    for i, q in enumerate(q_grid):
        params = SGParams.from_q(lambda_T, float(q), **param_kw)
        ens = simulate_pipeline(params, n_samples, seed + i, config)
        coh.append(coherence_factor(ens, plan))
        if keep_ensembles:
            ensembles.append(ens)
    curve = CoherenceCurve(float(lambda_T), q_grid, coh, ensembles)
    bad = check_monotone(curve.values, [c.ci95[0] for c in coh], [c.ci95[1] for c in coh])
    if bad:
        raise NonMonotoneCurve(
            f"coherence decreases beyond CI overlap between q={q_grid[bad[0]]} and q={q_grid[bad[0] + 1]}; "
            "increase n_samples"
        )
    return curve


def _bracket(x: float, nodes: np.ndarray):
    if x < nodes[0] or x > nodes[-1]:
        raise OutOfRange(f"{x} outside [{nodes[0]}, {nodes[-1]}]")
    i = int(np.searchsorted(nodes, x, side="right")) - 1
    i = min(max(i, 0), nodes.size - 2)
    t = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, t


def estimate_q(coherence, curve: CoherenceCurve) -> EstimateWithCI:
    """Invert the coherence curve by piecewise-linear interpolation.

    ``coherence`` may be a float or an :class:`EstimateWithCI`; its error and
    the curve's node errors are both propagated through the local slope.
    """
    c = coherence.value if isinstance(coherence, EstimateWithCI) else float(coherence)
    c_err = coherence.stderr if isinstance(coherence, EstimateWithCI) else 0.0
    vals = curve.values
    if np.any(np.diff(vals) <= 0):
        order = np.maximum.accumulate(vals)
        if np.any(np.diff(order) <= 0):
            raise NonMonotoneCurve("coherence curve is not strictly increasing; cannot invert")
    i, t = _bracket(c, vals)
    q0, q1 = curve.q[i], curve.q[i + 1]
    slope = (q1 - q0) / (vals[i + 1] - vals[i])
    q = q0 + t * (q1 - q0)
    node_err = (1 - t) * curve.stderrs[i] + t * curve.stderrs[i + 1]
    stderr = abs(slope) * math.hypot(c_err, node_err)
    at_edge = c in (vals[0], vals[-1])
    return EstimateWithCI(
        float(q), float(stderr), units="nats", method="estimate_q",
        meta={"extrapolation_risk": bool(at_edge), "segment": [float(q0), float(q1)]},
    )
