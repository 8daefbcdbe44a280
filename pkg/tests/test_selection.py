import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlearn.assembly import assemble
from mtlearn.data import (
    EmpiricalDistanceDistribution,
    ICBox,
    empirical_distance_distribution,
    generate_dataset,
)
from mtlearn.dynamics import SystemSpec
from mtlearn.kernels import BasisExpansion, BasisFamily, CutOff, OpinionThreshold
from mtlearn.sbl import SblConfig, SblPosterior
from mtlearn.selection import (
    KernelEstimate,
    NormalizationError,
    SelectionError,
    criterion_wEU,
    criterion_wPE,
    criterion_wTU,
    error_metrics,
    evaluate_candidate,
    normalization_scale,
    normalize_estimate,
    select_model,
    uq_band,
)


def _post(mu, cov_diag=None, s2_hat=0.0):
    mu = np.asarray(mu, float)
    cov = np.diag(np.zeros_like(mu) if cov_diag is None else np.asarray(cov_diag, float))
    alpha = np.where(mu != 0, 1.0, np.inf)
    return SblPosterior(mean=mu, covariance=cov, precisions=alpha, noise_var=1.0,
                        noise_var_hat=s2_hat)


def _rho(samples, weights=None):
    samples = np.asarray(samples, float)
    if weights is None:
        weights = np.full(samples.size, 1.0 / samples.size)
    return EmpiricalDistanceDistribution(samples, np.asarray(weights, float))


@pytest.fixture(scope="module")
def od_noise_free():
    spec = SystemSpec(order=1, N=100, d=1, kernel=OpinionThreshold())
    ds = generate_dataset(spec, M=3, L=6, T=5.0, ic_box=ICBox((0.0,), (12.0,)), seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        A = assemble(ds, BasisFamily(10.0, 100))
    return ds, A


# -- criteria ----------------------------------------------------------------

def test_wPE_examples():
    Phi = np.array([[0.25, 0.0], [0.0, 0.0]])
    assert criterion_wPE(_post([2.0, 0.0]), Phi, [1.0, 0.0]) == pytest.approx(0.0625)
    assert criterion_wPE(_post([2.0, 0.0]), Phi, [0.5, 0.0]) == 0.0
    assert criterion_wPE(_post([0.0, 0.0]), Phi, [1.0, 0.0]) == np.inf


def test_wEU_examples():
    assert criterion_wEU(_post([2.0, 0.0], [0.05, 0.0])) == pytest.approx(0.0125)
    assert criterion_wEU(_post([2.0, 0.0])) == 0.0
    assert criterion_wEU(_post([0.0, 0.0])) == np.inf


def test_wTU_examples():
    assert criterion_wTU(_post([2.0, 0.0], [0.05, 0.0], 0.1)) == pytest.approx(0.03)
    assert criterion_wTU(_post([0.0, 0.0], None, 0.7)) == pytest.approx(0.7)
    assert criterion_wTU(_post([1.0, 3.0])) == 0.0
    assert criterion_wTU(_post([1.0], None, float("nan"))) == np.inf


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 5), st.floats(0, 5))
def test_wTU_bounded_by_total_uncertainty(mu, v, s2):
    post = _post(mu, [v] * len(mu), s2)
    assert criterion_wTU(post) <= s2 + v * len(mu) + 1e-12


# -- selection ---------------------------------------------------------------

def test_zero_column_never_selected():
    rng = np.random.default_rng(2)
    c = np.array([1.0, 0.5, 0.0, 0.2, 0.0, 0.0, 0.0, 0.1])
    P = rng.normal(size=(60, 8))
    A = P - np.outer(P @ c, c) / (c @ c)
    A[:, 6] = 0.0
    est = select_model(A, SblConfig(), "wTU")
    assert est.k_star != 7
    cand = {r.k_star: r for r in est.candidates}
    assert not cand[7].admissible and cand[7].wTU == np.inf
    with pytest.raises(SelectionError) as err:
        select_model(A, SblConfig(), "wTU", candidates=[7])
    assert err.value.excluded == [7]


def test_degenerate_candidate_skipped():
    # column 1 is orthogonal to column 2, so pinning either leaves b uncorrelated with Phi
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    r1 = evaluate_candidate(A, 1, SblConfig())
    assert r1.admissible and r1.wTU == np.inf
    B = np.array([[1.0, -1.0], [2.0, -2.0], [0.0, 1e-3], [1.0, -1.0]])
    B[:, 0] = 0.0
    B[0, 0] = 1.0
    est = select_model(B, SblConfig(), "wTU")
    assert est.k_star == 2


def test_all_degenerate_raises():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(SelectionError):
        select_model(A, SblConfig(), "wTU")


def test_selection_argument_validation():
    A = np.ones((3, 2))
    with pytest.raises(ValueError):
        select_model(A, SblConfig(), "AIC")
    with pytest.raises(ValueError):
        select_model(np.ones((3, 1)), SblConfig(), "wTU")
    with pytest.raises(SelectionError):
        select_model(A, SblConfig(), "wTU", candidates=[3])


def test_tie_breaks_to_smallest_index():
    c = np.array([1.0, 1.0])
    rng = np.random.default_rng(0)
    P = rng.normal(size=(20, 1))
    A = np.hstack([P, -P])  # symmetric: both candidates give identical fits
    est = select_model(A, SblConfig(), "wTU")
    assert est.k_star == 1
    # fixed noise variance at 1% of ||b||^2 shrinks the free coefficient slightly
    np.testing.assert_allclose(est.coefficients, c, rtol=0.02)


def test_noise_free_opinion_dynamics_all_criteria(od_noise_free):
    ds, A = od_noise_free
    cfg = SblConfig(noise_reestimate=True, hyperprior="flat")
    rho = empirical_distance_distribution(ds)
    for crit in ("wTU", "wPE", "wEU"):
        est = select_model(A, cfg, crit)
        assert 1 <= est.k_star <= 10
    c = normalize_estimate(est, OpinionThreshold(), rho)
    ref = np.zeros(100)
    ref[:5], ref[5:10] = 1.0, 0.1
    np.testing.assert_allclose(c, ref, atol=1e-6)


def test_selection_deterministic_and_jobs(od_noise_free):
    _, A = od_noise_free
    cands = [1, 2, 15, 16, 40]
    e1 = select_model(A, SblConfig(), "wTU", candidates=cands)
    e2 = select_model(A, SblConfig(), "wTU", candidates=cands, jobs=3)
    assert e1.k_star == e2.k_star
    np.testing.assert_array_equal(e1.coefficients, e2.coefficients)


@pytest.mark.parametrize("alpha", [1e-3, 7.0, 250.0])
@pytest.mark.parametrize("crit", ["wPE", "wEU"])
def test_argmin_scale_invariance(od_noise_free, alpha, crit):
    _, A = od_noise_free
    cands = [1, 2, 3, 15, 16, 17, 40, 41]
    base = select_model(A, SblConfig(), crit, candidates=cands)
    # the noise initialisation is proportional to ||b||^2, so it follows alpha^2
    scaled = select_model(alpha * A.matrix, SblConfig(), crit, candidates=cands, basis=A.basis)
    assert scaled.k_star == base.k_star
    np.testing.assert_allclose(scaled.coefficients, base.coefficients, rtol=1e-6, atol=1e-9)


def test_wTU_mixes_units(od_noise_free):
    # sigma^2 carries the units of b^2 while tr(Sigma) and ||mu||^2 are unitless,
    # so rescaling A rescales only part of the wTU numerator
    _, A = od_noise_free
    r1 = evaluate_candidate(A.matrix, 2, SblConfig())
    r2 = evaluate_candidate(1e-3 * A.matrix, 2, SblConfig())
    assert r2.posterior.noise_var_hat == pytest.approx(1e-6 * r1.posterior.noise_var_hat, rel=1e-6)
    assert r2.wEU == pytest.approx(r1.wEU, rel=1e-6)


def test_estimate_json(od_noise_free):
    _, A = od_noise_free
    est = select_model(A, SblConfig(), "wTU", candidates=[2, 3, 40])
    d = json.loads(json.dumps(est.to_dict(band_grid=np.linspace(0, 10, 11))))
    assert d["k_star"] == est.k_star
    assert d["coefficients"][est.k_star - 1] == 1.0
    assert [c["k_star"] for c in d["candidates"]] == [2, 3, 40]
    assert len(d["band"]["lower"]) == 11
    for c in d["candidates"]:
        assert c["k_star"] not in (c["active"] or [])


# -- band --------------------------------------------------------------------

def _estimate(coeffs, variances, k_star, K=4, R=4.0):
    return KernelEstimate(BasisFamily(R, K), k_star, np.asarray(coeffs, float),
                          np.asarray(variances, float), "wTU")


def test_band_collapses_without_variance():
    est = _estimate([1.0, 0.3, 0.0, 0.2], np.zeros(4), 1)
    r = np.linspace(0, 4, 17)
    lo, hi = uq_band(est, r)
    np.testing.assert_allclose(lo, est(r))
    np.testing.assert_allclose(hi, est(r))


def test_band_outside_domain_is_zero():
    est = _estimate([1.0, 0.3, 0.0, 0.2], [0.0, 0.1, 0.0, 0.2], 1)
    lo, hi = uq_band(est, np.array([5.0, 100.0]))
    np.testing.assert_array_equal(lo, 0.0)
    np.testing.assert_array_equal(hi, 0.0)


def test_band_single_coefficient_example():
    est = _estimate([1.0, 2.0, 0.0, 0.0], [0.0, 0.1, 0.0, 0.0], 1)
    lo, hi = uq_band(est, np.array([1.5, 0.5]))
    # r = 1.5 lies in cell 2 (xi_2 = 1, xi_1 = 0); r = 0.5 in the pinned cell
    np.testing.assert_allclose(lo, [1.8, 1.0])
    np.testing.assert_allclose(hi, [2.2, 1.0])


@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5),
       st.lists(st.floats(0, 2), min_size=5, max_size=5), st.integers(1, 5))
def test_band_contains_estimate(mu, var, k):
    mu = np.array(mu)
    mu[k - 1] = 1.0
    var = np.array(var)
    var[k - 1] = 0.0
    est = _estimate(mu, var, k, K=5, R=5.0)
    r = np.linspace(0, 6, 61)
    lo, hi = uq_band(est, r)
    val = est(r)
    assert np.all(lo <= val + 1e-12) and np.all(val <= hi + 1e-12)


# -- normalization and metrics -------------------------------------------------

def test_normalization_scale_examples():
    basis = BasisFamily(2.0, 20)
    truth = CutOff(1.0)
    coeffs = (basis.edges[:-1] < 1.0).astype(float)
    rho = _rho(np.linspace(0.025, 1.975, 40))  # avoid the closed cut-off endpoint
    double = BasisExpansion(basis, 2 * coeffs)
    assert normalization_scale(double, truth, rho) == pytest.approx(0.5)
    np.testing.assert_allclose(normalize_estimate(double, truth, rho), coeffs)
    assert normalization_scale(BasisExpansion(basis, coeffs), truth, rho) == pytest.approx(1.0)
    point = _rho([0.35], [1.0])
    other = BasisExpansion(basis, np.linspace(1, 3, 20))
    assert normalization_scale(other, truth, point) == pytest.approx(1.0 / abs(other(0.35)))


def test_normalization_zero_mass():
    basis = BasisFamily(2.0, 4)
    est = BasisExpansion(basis, [0.0, 0.0, 0.0, 1.0])
    with pytest.raises(NormalizationError):
        normalization_scale(est, CutOff(1.0), _rho([0.1, 0.6]))


def test_error_metrics_examples():
    truth = CutOff(1.0)
    rho = _rho(np.linspace(0.0, 2.0, 21))
    assert error_metrics(truth, truth, rho) == {"rel_Linf": 0.0, "rel_L1_rho": 0.0}
    shifted = lambda r: truth(r) + 0.1
    assert error_metrics(shifted, truth, rho)["rel_Linf"] == pytest.approx(0.1)
    disjoint = lambda r: np.where(np.asarray(r) > 1.0, 1.0, 0.0)
    w = rho.weights
    s = rho.samples
    ref = np.sum(w * np.abs(disjoint(s) - truth(s))) / np.sum(w * np.abs(truth(s)))
    assert error_metrics(disjoint, truth, rho)["rel_L1_rho"] == pytest.approx(ref)
