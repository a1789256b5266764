from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from phaseinfo.ensemble import DataCloud
from phaseinfo.errors import DomainError, DuplicatePoints, KTooLarge, SingularCovariance
from phaseinfo.estimators import (
    EstimateWithCI,
    differential_entropy,
    digamma,
    fit_nearest_gaussian,
    kl_to_nearest_gaussian,
    ksg_mutual_information,
    sample_gaussian,
)
from phaseinfo.resampling import JackknifePlan, jackknife

EULER = 0.57721566490153286


def gaussian_pair(n, rho, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = rho * x[:, 0] + math.sqrt(1 - rho**2) * x[:, 1]
    return DataCloud.from_arrays(x[:, 0], y)


# --- digamma ------------------------------------------------------------------------

def test_digamma_reference_values():
    assert digamma(1.0) == pytest.approx(-EULER, abs=1e-14)
    assert digamma(2.0) == pytest.approx(1 - EULER, abs=1e-14)
    assert digamma(0.5) == pytest.approx(-EULER - 2 * math.log(2), abs=1e-14)


@settings(max_examples=300)
@given(st.floats(1e-3, 1e7))
def test_digamma_matches_scipy(x):
    assert abs(digamma(x) - scipy.special.digamma(x)) <= 1e-12 * max(1.0, abs(scipy.special.digamma(x)))


def test_digamma_vectorised_and_domain():
    n = np.arange(1, 5000)
    np.testing.assert_allclose(digamma(n), scipy.special.digamma(n), rtol=0, atol=1e-12)
    for bad in (0.0, -1.0, np.nan):
        with pytest.raises(DomainError):
            digamma(bad)


# --- EstimateWithCI -----------------------------------------------------------------

def test_estimate_units_round_trip():
    e = EstimateWithCI(0.8304, 0.01, units="nats", k=2, n_samples=100, method="ksg")
    b = e.to_units("bits")
    assert b.value == pytest.approx(0.8304 / math.log(2), rel=1e-15)
    back = b.to_units("nats")
    assert back.value == pytest.approx(e.value, rel=1e-15)
    assert back.ci95 == pytest.approx(e.ci95, rel=1e-15)
    assert e.ci95[0] <= e.value <= e.ci95[1]
    assert EstimateWithCI.from_dict(e.as_dict()) == e


# --- KSG ----------------------------------------------------------------------------

def test_ksg_independent():
    # single-draw spread at N = 5000 is ~0.014 nats, so +/-0.03 is a ~2 sigma band:
    # check the mean over seeds and the fraction of draws inside the band
    vals = np.array([ksg_mutual_information(gaussian_pair(5000, 0.0, s)) for s in range(20)])
    assert abs(vals.mean()) < 0.01
    assert np.mean(np.abs(vals) < 0.03) >= 0.85


@pytest.mark.parametrize("rho, tol", [(0.5, 0.03), (0.9, 0.04)])
def test_ksg_correlated_gaussian(rho, tol):
    truth = -0.5 * math.log(1 - rho**2)
    assert ksg_mutual_information(gaussian_pair(10000, rho, 2)) == pytest.approx(truth, abs=tol)


def test_gaussian_mi_closed_form_matches_quadrature():
    # the closed form used as oracle, cross-checked by integrating f ln(f / (f_A f_B))
    rho = 0.9
    joint = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]])

    def integrand(y, x):
        p = joint.pdf([x, y])
        return p * math.log(p / (stats.norm.pdf(x) * stats.norm.pdf(y))) if p > 0 else 0.0

    val, _ = integrate.dblquad(integrand, -8, 8, -8, 8, epsabs=1e-7)
    assert val == pytest.approx(-0.5 * math.log(1 - rho**2), abs=1e-4)


def test_ksg_symmetry_bit_identical():
    c = gaussian_pair(2000, 0.6, 3)
    rng = np.random.default_rng(0)
    c3 = DataCloud(np.hstack([c.points, rng.normal(size=(2000, 2))]), 1)
    assert ksg_mutual_information(c3) == ksg_mutual_information(c3.swapped())
    assert ksg_mutual_information(c) == ksg_mutual_information(c.swapped())


def test_ksg_monotone_map_invariance():
    c = gaussian_pair(5000, 0.7, 4)
    t = DataCloud(np.column_stack([c.points[:, 0] ** 3, np.exp(c.points[:, 1])]), 1)
    assert abs(ksg_mutual_information(c) - ksg_mutual_information(t)) < 0.05


def test_ksg_matches_entropy_decomposition():
    rng = np.random.default_rng(5)
    cov = np.array([[1, 0.5, 0.3, 0.1], [0.5, 1, 0.4, 0.2], [0.3, 0.4, 1, 0.5], [0.1, 0.2, 0.5, 1]])
    x = rng.multivariate_normal(np.zeros(4), cov, 10000)
    cloud = DataCloud(x, 2)
    mi = ksg_mutual_information(cloud)
    parts = differential_entropy(x[:, :2]) + differential_entropy(x[:, 2:]) - differential_entropy(x)
    assert abs(mi - parts) < 0.1
    truth = 0.5 * math.log(np.linalg.det(cov[:2, :2]) * np.linalg.det(cov[2:, 2:]) / np.linalg.det(cov))
    assert mi == pytest.approx(truth, abs=0.05)


def test_noise_axis_barely_changes_mi():
    c = gaussian_pair(3000, 0.7, 6)
    noise = np.random.default_rng(7).normal(size=3000)
    c2 = DataCloud(np.column_stack([c.points[:, 0], noise, c.points[:, 1]]), 2)
    plan = JackknifePlan(repetitions=100)
    e1 = jackknife(ksg_mutual_information, c, plan)
    e2 = jackknife(ksg_mutual_information, c2, plan)
    assert abs(e1.value - e2.value) < 3 * math.hypot(e1.stderr, e2.stderr)


def test_duplicates_and_jitter():
    c = gaussian_pair(100, 0.5, 8)
    pts = c.points.copy()
    pts[10] = pts[3]
    dup = DataCloud(pts, 1)
    with pytest.raises(DuplicatePoints) as info:
        ksg_mutual_information(dup)
    assert info.value.shots == [3, 10]
    assert np.isfinite(ksg_mutual_information(dup, jitter=True, seed=1))
    with pytest.raises(KTooLarge):
        ksg_mutual_information(c.take(range(2)), k=2)


def test_negative_estimates_not_clamped():
    vals = [ksg_mutual_information(gaussian_pair(300, 0.0, s)) for s in range(20)]
    assert min(vals) < 0


# --- nearest Gaussian ---------------------------------------------------------------

def test_fit_nearest_gaussian_examples():
    g = fit_nearest_gaussian(np.array([-1.0, 0.0, 1.0]))
    assert g.mean[0] == 0.0 and g.covariance[0, 0] == pytest.approx(1.0)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(20000, 3))
    g = fit_nearest_gaussian(x)
    off = g.covariance - np.diag(np.diag(g.covariance))
    assert np.max(np.abs(off)) < 0.03
    np.testing.assert_allclose(g.covariance, g.covariance.T, atol=1e-12)
    np.testing.assert_allclose(g.factor @ g.factor.T, g.covariance, rtol=1e-10)
    with pytest.raises(SingularCovariance):
        fit_nearest_gaussian(np.column_stack([x[:, 0], x[:, 0]]))
    with pytest.raises(SingularCovariance):
        fit_nearest_gaussian(x[:3])


def test_sample_gaussian():
    g = fit_nearest_gaussian(np.array([-1.0, 0.0, 1.0]))
    s = sample_gaussian(g, 100000, 3)
    assert abs(s.mean()) < 0.01 and abs(s.var() - 1.0) < 0.01
    np.testing.assert_array_equal(s, sample_gaussian(g, 100000, 3))


# --- relative entropy ---------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2, 6])
def test_kl_gaussian_data_near_zero(d):
    rng = np.random.default_rng(10 + d)
    a = rng.normal(size=(d, d))
    x = rng.normal(size=(5000, d)) @ (a + d * np.eye(d))
    assert abs(kl_to_nearest_gaussian(x, seed=d)) < 0.05


def mixture_kl_oracle():
    def f(x):
        return 0.5 * (stats.norm.pdf(x, -2, 1) + stats.norm.pdf(x, 2, 1))

    g = stats.norm(0, math.sqrt(5)).pdf
    val, _ = integrate.quad(lambda x: f(x) * math.log(f(x) / g(x)), -20, 20, limit=200)
    return val


def test_kl_mixture_matches_quadrature():
    rng = np.random.default_rng(11)
    n = 20000
    x = rng.normal(size=n) + np.where(rng.random(n) < 0.5, -2.0, 2.0)
    assert kl_to_nearest_gaussian(x, seed=1) == pytest.approx(mixture_kl_oracle(), abs=0.05)


def test_kl_mean_over_repetitions_near_zero():
    vals = []
    for s in range(100):
        x = np.random.default_rng(1000 + s).normal(size=(1000, 2))
        vals.append(kl_to_nearest_gaussian(x, seed=s))
    assert abs(np.mean(vals)) < 0.02


def test_kl_deterministic():
    x = np.random.default_rng(0).normal(size=(500, 3))
    assert kl_to_nearest_gaussian(x, seed=4) == kl_to_nearest_gaussian(x, seed=4)


# --- differential entropy -----------------------------------------------------------

@pytest.mark.parametrize(
    "draw, truth",
    [
        (lambda r: r.uniform(0, 1, 10000), 0.0),
        (lambda r: r.standard_normal(10000), 0.5 * math.log(2 * math.pi * math.e)),
        (lambda r: r.uniform(0, 2, 10000), math.log(2)),
    ],
)
def test_entropy_examples(draw, truth):
    x = draw(np.random.default_rng(12))
    assert differential_entropy(x) == pytest.approx(truth, abs=0.03)
