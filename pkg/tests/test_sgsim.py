from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from phaseinfo import sgsim
from phaseinfo.ensemble import PhaseEnsemble, mean_cos
from phaseinfo.errors import NonMonotoneCurve, OutOfRange, ValidationError
from phaseinfo.estimators import EstimateWithCI
from phaseinfo.resampling import JackknifePlan
from phaseinfo.sgsim import (
    PipelineConfig,
    SGParams,
    apply_psf,
    build_transfer_operator,
    coherence_curve,
    dimensionless_action,
    estimate_q,
    sample_metropolis,
    sample_transfer,
    simulate_pipeline,
)


def bulk_coherence_oracle(lambda_T, q, n_modes=60):
    """Bulk <cos phi> of the continuum measure from its transfer Hamiltonian.

    Along z the weight is that of a particle on a circle with mass lambda_T/4
    in the potential q^2/(4 lambda_T)(1 - cos phi); in the basis exp(i n phi)
    the Hamiltonian is tridiagonal.  <cos phi> is the ground-state expectation.
    """
    n = np.arange(-n_modes, n_modes + 1)
    h = np.diag(2.0 / lambda_T * n**2 + q**2 / (4 * lambda_T))
    off = -q**2 / (8 * lambda_T) * np.ones(n.size - 1)
    h += np.diag(off, 1) + np.diag(off, -1)
    _, vecs = np.linalg.eigh(h)
    g = vecs[:, 0]
    return float(np.sum(g[:-1] * g[1:]))


def chain_stats(values: np.ndarray, n_chains: int):
    """Mean and standard error from per-chain means (robust to autocorrelation)."""
    per = values.reshape(n_chains, -1).mean(axis=1)
    return per.mean(), per.std(ddof=1) / math.sqrt(n_chains)


# --- parameters -----------------------------------------------------------------------

def test_parameter_conversions():
    p = SGParams.from_q(15.0, 2.0)
    assert p.q == pytest.approx(2.0, rel=1e-12)
    assert p.ell_J == pytest.approx(7.5)
    assert sgsim.coupling_length(p.J) == pytest.approx(p.ell_J, rel=1e-12)
    assert sgsim.thermal_length(p.T, p.n_1D) == pytest.approx(p.lambda_T, rel=1e-12)
    back = SGParams.from_physical(p.T, p.J, p.n_1D)
    assert back.lambda_T == pytest.approx(15.0, rel=1e-12) and back.q == pytest.approx(2.0, rel=1e-12)
    # lambda_T = 15 um at n = 70/um corresponds to a few tens of nK
    assert 10 < p.T < 200
    m0 = SGParams.from_q(15.0, 0.0)
    assert math.isinf(m0.ell_J) and m0.q == 0.0 and m0.J == 0.0
    assert p.dz == pytest.approx(0.8) and p.grid[0] == pytest.approx(0.4)


def test_parameter_validation():
    for kw in ({"L": 0.0}, {"n_grid": 1}, {"sigma_PSF": -1.0}):
        with pytest.raises(ValidationError):
            SGParams.from_q(15.0, 1.0, **kw)
    with pytest.raises(ValidationError):
        SGParams(lambda_T=15.0, ell_J=7.5, J=1.0)
    with pytest.raises(ValidationError):
        SGParams.from_q(15.0, -1.0)


# --- action ---------------------------------------------------------------------------

def test_action_examples():
    p = SGParams.from_q(15.0, 2.0, L=60.0, n_grid=150)
    assert dimensionless_action(np.zeros(150), p) == 0.0
    assert dimensionless_action(np.full(150, math.pi), p) == pytest.approx(8.0, rel=1e-12)
    n = 200
    m = SGParams.from_q(15.0, 0.0, L=60.0, n_grid=n)
    ramp = 2 * math.pi * m.grid / m.L
    continuum = (15.0 / 8) * (2 * math.pi) ** 2 / 60.0
    assert dimensionless_action(ramp, m) == pytest.approx(continuum, rel=1.0 / n)
    with pytest.raises(ValidationError):
        dimensionless_action(np.zeros(10), p)
    stack = np.vstack([np.zeros(150), np.full(150, math.pi)])
    np.testing.assert_allclose(dimensionless_action(stack, p), [0.0, 8.0])


# --- transfer operator ----------------------------------------------------------------

@pytest.mark.parametrize("q, lam, dz", [(0.0, 15.0, 0.8), (2.0, 10.0, 0.8), (6.0, 20.0, 2.0), (4.0, 15.0, 0.1)])
def test_kernel_properties(q, lam, dz):
    op = build_transfer_operator(SGParams.from_q(lam, q), M=256, W=4, dz=dz)
    k = op.kernel
    assert np.all(k > 0) and np.all(np.isfinite(k))
    np.testing.assert_array_equal(k, k.T)
    rows = k.sum(axis=1)
    assert np.all(np.isfinite(rows)) and np.all(rows > 0)
    if q == 0:
        # pure Gaussian in the (minimum-image) difference
        d = (op.phi_grid[:, None] - op.phi_grid[None, :] + 4 * math.pi) % (8 * math.pi) - 4 * math.pi
        big = k > 1e-200
        np.testing.assert_allclose(k[big], np.exp(-(lam / 8) * d[big] ** 2 / dz), rtol=1e-12)


def test_operator_validation():
    p = SGParams.from_q(15.0, 1.0)
    with pytest.raises(ValidationError):
        build_transfer_operator(p, M=32)
    with pytest.raises(ValidationError):
        build_transfer_operator(p, W=1)


def test_transfer_deterministic():
    p = SGParams.from_q(15.0, 2.0, L=20.0, n_grid=25)
    op = build_transfer_operator(p)
    a = sample_transfer(p, op, 500, 3)
    b = sample_transfer(p, op, 500, 3)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, sample_transfer(p, op, 500, 4).samples)
    assert np.all(a.samples[:, 0] >= -math.pi) and np.all(a.samples[:, 0] < math.pi)


@pytest.mark.parametrize("q", [1.0, 2.0, 4.0])
def test_transfer_bulk_coherence_matches_continuum_oracle(q):
    lam = 15.0
    p = SGParams.from_q(lam, q)
    ens = sample_transfer(p, build_transfer_operator(p), 4000, 11)
    bulk = np.cos(ens.samples[:, 50:100])
    per_shot = bulk.mean(axis=1)
    se = per_shot.std(ddof=1) / math.sqrt(per_shot.size)
    # small discretisation offset from the finite step dz = 0.8 um
    assert abs(per_shot.mean() - bulk_coherence_oracle(lam, q)) < 3 * se + 0.01


def test_massless_increments_match_gaussian_oracle():
    # at q = 0 increments are i.i.d. N(0, 4 dz / lambda_T): the variance of
    # phi(z) - phi(0) grows with slope 4 / lambda_T
    lam = 12.0
    p = SGParams.from_q(lam, 0.0, L=40.0, n_grid=50)
    ens = sample_transfer(p, build_transfer_operator(p), 20000, 5)
    inc = ens.samples - ens.samples[:, :1]
    var = inc.var(axis=0)
    sep = p.grid - p.grid[0]
    slope = np.polyfit(sep[1:], var[1:], 1)[0]
    assert slope == pytest.approx(4.0 / lam, rel=0.03)
    steps = np.diff(ens.samples, axis=1).ravel()
    # Gaussian step law (excess kurtosis within 3 standard errors of 0)
    k = stats.kurtosis(steps)
    assert abs(k) < 3 * math.sqrt(24.0 / steps.size)


def test_metropolis_massless_slope_and_limits():
    lam = 12.0
    p = SGParams.from_q(lam, 0.0, L=12.0, n_grid=12)
    ens = sample_metropolis(p, 4000, 1, burn_in=500, thin=20, n_chains=200)
    assert 0.2 < ens.meta["acceptance_rate"] < 0.8
    inc = ens.samples - ens.samples[:, :1]
    var = inc.var(axis=0)
    slope = np.polyfit(p.grid[1:] - p.grid[0], var[1:], 1)[0]
    assert slope == pytest.approx(4.0 / lam, rel=0.1)
    # long massless chain: coherence ~ 0
    long = SGParams.from_q(5.0, 0.0, L=60.0, n_grid=30)
    e = sample_metropolis(long, 2000, 2, burn_in=1000, thin=20, n_chains=100)
    m, se = chain_stats(np.cos(e.samples).mean(axis=1), 100)
    assert abs(m) < max(3 * se, 0.05)
    # strong coupling locks the phase
    strong = SGParams.from_q(15.0, 10.0, L=16.0, n_grid=16)
    e = sample_metropolis(strong, 1000, 3, burn_in=500, thin=10, n_chains=50)
    assert mean_cos(e) > 0.85
    assert bulk_coherence_oracle(15.0, 30.0) > 0.96


def test_metropolis_deterministic():
    p = SGParams.from_q(15.0, 2.0, L=8.0, n_grid=8)
    a = sample_metropolis(p, 50, 9, burn_in=50, thin=2, n_chains=5)
    b = sample_metropolis(p, 50, 9, burn_in=50, thin=2, n_chains=5)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_transfer_matches_metropolis_small_system():
    p = SGParams.from_q(15.0, 2.0, L=16.0, n_grid=16)
    tr = sample_transfer(p, build_transfer_operator(p), 5000, 21)
    mc = sample_metropolis(p, 5000, 22, burn_in=1500, thin=50, n_chains=500)
    for stat_tr, stat_mc in [
        (np.cos(tr.samples).mean(axis=1), np.cos(mc.samples).mean(axis=1)),
        (np.cos(tr.samples[:, 0] - tr.samples[:, 8]), np.cos(mc.samples[:, 0] - mc.samples[:, 8])),
    ]:
        m_mc, se_mc = chain_stats(stat_mc, 500)
        se_tr = stat_tr.std(ddof=1) / math.sqrt(stat_tr.size)
        assert abs(stat_tr.mean() - m_mc) < 3 * math.hypot(se_tr, se_mc)


def test_reweighting_consistency():
    # Metropolis samples at q reweighted to q' reproduce direct sampling at q'
    lam, q0, q1 = 15.0, 2.0, 2.3
    p0 = SGParams.from_q(lam, q0, L=16.0, n_grid=16)
    p1 = SGParams.from_q(lam, q1, L=16.0, n_grid=16)
    mc = sample_metropolis(p0, 6000, 31, burn_in=1500, thin=50, n_chains=600)
    dS = dimensionless_action(mc.samples, p1) - dimensionless_action(mc.samples, p0)
    w = np.exp(-(dS - dS.min()))
    obs = np.cos(mc.samples).mean(axis=1)
    rew = np.sum(w * obs) / w.sum()
    # chain-level error of the ratio estimator
    wc = w.reshape(600, -1).sum(axis=1)
    oc = (w * obs).reshape(600, -1).sum(axis=1)
    ratio_se = np.std(oc / wc.mean() - rew * wc / wc.mean(), ddof=1) / math.sqrt(600)
    direct = sample_transfer(p1, build_transfer_operator(p1), 6000, 32)
    d = np.cos(direct.samples).mean(axis=1)
    se_d = d.std(ddof=1) / math.sqrt(d.size)
    assert abs(rew - d.mean()) < 3 * math.hypot(ratio_se, se_d)


def test_grid_resolution():
    # doubling M or W moves <cos phi> by less than one standard error
    p = SGParams.from_q(15.0, 2.0)
    base = simulate_pipeline(p, 4000, 41)
    per = np.cos(base.samples).mean(axis=1)
    se = per.std(ddof=1) / math.sqrt(per.size)
    for cfg in (PipelineConfig(M=1024), PipelineConfig(W=16, M=1024)):
        other = simulate_pipeline(p, 4000, 41, cfg)
        assert abs(mean_cos(other) - mean_cos(base)) < se


# --- PSF and pipeline -----------------------------------------------------------------

def test_psf_examples():
    e = PhaseEnsemble.from_samples(np.random.default_rng(0).normal(size=(3, 40)), dz=2.0)
    np.testing.assert_array_equal(apply_psf(e, 0.0).samples, e.samples)
    c = PhaseEnsemble.from_samples(np.full((2, 40), 1.7), dz=2.0)
    np.testing.assert_allclose(apply_psf(c, 3.0).samples, 1.7, rtol=1e-14)
    spike = np.zeros((1, 61))
    spike[0, 30] = 5.0
    out = apply_psf(PhaseEnsemble.from_samples(spike, dz=2.0), 6.0).samples[0]
    z = (np.arange(61) - 30) * 2.0
    assert out.sum() == pytest.approx(5.0, rel=1e-12)
    assert np.sum(out * z**2) / out.sum() == pytest.approx(36.0, rel=0.02)
    with pytest.raises(ValidationError):
        apply_psf(e, -1.0)


def test_pipeline_shape_and_provenance(coarse_q2):
    assert coarse_q2.samples.shape == (2000, 6)
    assert coarse_q2.dz == pytest.approx(10.0)
    ops = [h["op"] for h in coarse_q2.meta["history"]]
    assert ops == ["interpolate", "apply_psf", "select_central", "reduce_global_offset", "coarse_grain"]
    assert coarse_q2.meta["params"]["q"] == 2.0 and coarse_q2.meta["sampler"] == "transfer"
    # offset window centred on the potential minimum
    m = coarse_q2.samples.mean(axis=1)
    assert np.all(m >= -math.pi) and np.all(m < math.pi)


def test_fine_pipeline(fine_q3):
    assert fine_q3.n_pixels == 30 and fine_q3.dz == pytest.approx(2.0)


# --- coherence curve and q inversion --------------------------------------------------

@pytest.fixture(scope="module")
def curve():
    return coherence_curve(15.0, [0.0, 1.0, 2.0, 3.0, 4.0, 6.0], 3000, 50, PipelineConfig(),
                           JackknifePlan(repetitions=300), sigma_PSF=0.0)


def test_coherence_curve(curve):
    v = curve.values
    assert abs(v[0]) < 3 * curve.stderrs[0] + 0.01
    assert np.all(np.diff(v) > 0)
    assert 0.9 < v[-1] < 1.0
    assert curve.values[2] == pytest.approx(0.48, abs=0.03)
    assert len(curve.rows()) == 6


def test_estimate_q(curve):
    q = estimate_q(0.48, curve)
    assert q.value == pytest.approx(2.0, abs=0.25)
    assert q.stderr > 0
    top = estimate_q(curve.values[-1], curve)
    assert top.value == pytest.approx(6.0) and top.meta["extrapolation_risk"]
    assert not q.meta["extrapolation_risk"]
    with pytest.raises(OutOfRange):
        estimate_q(1.5, curve)
    wider = estimate_q(EstimateWithCI(0.48, 0.02), curve)
    assert wider.stderr > q.stderr


def test_non_monotone_curve_detected(monkeypatch):
    fake = iter([0.5, 0.2, 0.8])

    def pipeline(params, n, seed, config):
        c = next(fake)
        x = np.full((200, 6), math.acos(c))
        x[::2] *= -1
        x = x + np.random.default_rng(seed).normal(0, 1e-3, x.shape)
        return PhaseEnsemble.from_samples(x, 10.0)

    monkeypatch.setattr(sgsim, "simulate_pipeline", pipeline)
    with pytest.raises(NonMonotoneCurve):
        coherence_curve(15.0, [0.0, 1.0, 2.0], 200, 0, plan=JackknifePlan(repetitions=20))
    with pytest.raises(ValidationError):
        coherence_curve(15.0, [1.0, 0.5], 200, 0)
