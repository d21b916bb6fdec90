import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from cone_certify import dynamics as dyn, transfer as tr, verify as vf
from cone_certify.errors import DegenerateVarianceError, DomainError, VerificationFailure


@pytest.fixture(scope="module")
def doubling():
    spec = dyn.doubling_map()
    f = dyn.observable("cos1", spec.metric)
    return spec, f, tr.model_for(spec, f, 4096)


# empirical side


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 400))
def test_kolmogorov_distance_matches_scipy(seed, m):
    x = np.random.default_rng(seed).normal(0.1, 1.2, size=m)
    ks = stats.kstest(x, "norm").statistic
    assert vf.kolmogorov_distance(vf.EmpiricalCDF(x)) == pytest.approx(ks, abs=1e-12)


def test_kolmogorov_distance_single_point():
    assert vf.kolmogorov_distance(vf.EmpiricalCDF([0.0])) == pytest.approx(0.5)


def test_dkw_slack():
    assert vf.dkw_slack(10 ** 6) == pytest.approx(math.sqrt(math.log(2000) / 2e6), rel=1e-15)
    assert 1.9e-3 < vf.dkw_slack(10 ** 6) < 2.0e-3
    assert vf.EmpiricalCDF(np.zeros(100)).slack == vf.dkw_slack(100)


def test_empirical_cdf_rejects_empty():
    with pytest.raises(DomainError):
        vf.EmpiricalCDF([])


# characteristic function


def test_char_fn_one_step_is_bessel(doubling):
    spec, f, m = doubling
    sigma = 0.8
    ts = np.array([0.0, 0.3, 1.0, 2.5, 7.0])
    got = vf.char_fn_batch(m, 1, ts, sigma)
    # E exp(i s cos(2 pi x)) = J0(s) under Lebesgue measure
    assert np.allclose(got, special.j0(ts / sigma), atol=1e-6)


def test_char_fn_two_steps_against_quadrature(doubling):
    spec, f, m = doubling
    sigma = 1.0
    t = 1.7
    s = t / (sigma * math.sqrt(2))

    def part(fn):
        return integrate.quad(lambda x: fn(s * (math.cos(2 * math.pi * x) + math.cos(4 * math.pi * x))),
                              0, 1, limit=200)[0]

    expected = complex(part(math.cos), part(math.sin))
    assert vf.char_fn(spec, f, 2, t, sigma=sigma, model=m) == pytest.approx(expected, abs=1e-6)


def test_char_fn_bounded_and_normalized(doubling):
    _, _, m = doubling
    ts = np.linspace(0, 60, 97)
    vals = vf.char_fn_batch(m, 64, ts, math.sqrt(0.5))
    assert vals[0] == 1.0
    assert np.all(np.abs(vals) <= 1 + 1e-8)


def test_char_fn_early_exit_matches_full_iteration(doubling):
    _, _, m = doubling
    ts = np.linspace(0.5, 12, 24)
    fast = vf.char_fn_batch(m, 128, ts, math.sqrt(0.5))
    full = vf.char_fn_batch(m, 128, ts, math.sqrt(0.5), tol=0.0, floor=0.0)
    assert np.max(np.abs(fast - full)) <= 1e-9


# Feller bound


def test_t_grid_even_pieces():
    ts = vf.t_grid(200.0)
    split = int(np.searchsorted(ts, 10.0))
    assert ts[0] == 0.0 and ts[-1] == 200.0
    assert split % 2 == 0 and (ts.size - 1 - split) % 2 == 0
    assert np.all(np.diff(ts) > 0)


def test_t_grid_short_range():
    ts = vf.t_grid(3.0)
    assert ts[-1] == 3.0 and (ts.size - 1) % 2 == 0


def test_feller_bound_of_exact_gaussian_is_tail_only():
    ts = vf.t_grid(50.0)
    fb = vf.feller_bound(ts, np.exp(-ts ** 2 / 2), split=int(np.searchsorted(ts, 10.0)))
    assert fb.integral == 0.0
    assert fb.bound == pytest.approx(24 / (math.pi * 50 * math.sqrt(2 * math.pi)), rel=1e-15)


def test_feller_bound_known_integrand():
    # phi(t) = e^{-t^2/2}(1 + i a t^3) gives integrand a t^2 e^{-t^2/2}, integral over R = a sqrt(2 pi)
    a = 0.01
    ts = np.linspace(0, 40, 4001)
    fb = vf.feller_bound(ts, np.exp(-ts ** 2 / 2) * (1 + 1j * a * ts ** 3))
    assert fb.integral == pytest.approx(a * math.sqrt(2 * math.pi), rel=1e-6)
    assert fb.quad_error < 1e-6 * fb.integral


def test_feller_bound_rejects_coarse_grid():
    ts = np.linspace(0, 40, 9)
    with pytest.raises(DomainError, match="too coarse"):
        vf.feller_bound(ts, np.exp(-ts ** 2 / 2) * np.cos(3 * ts))


def test_feller_bound_rejects_bad_grid():
    with pytest.raises(DomainError):
        vf.feller_bound(np.linspace(1, 2, 5), np.ones(5))


# variance and moments


def test_second_moment_doubling(doubling):
    _, _, m = doubling
    mom = vf.second_moment(m, [1, 7, 64])
    for n, v in mom.items():
        assert v == pytest.approx(n / 2, rel=1e-6)


def test_variance_estimate_doubling(doubling):
    _, _, m = doubling
    est = vf.variance_estimate(m)
    assert est.value == pytest.approx(0.5, abs=1e-6)
    assert not est.degenerate


def test_cocycle_is_degenerate():
    spec = dyn.doubling_map()
    f = dyn.observable("cocycle", spec.metric)
    m = tr.model_for(spec, f, 4096)
    with pytest.raises(DegenerateVarianceError):
        vf.variance_estimate(m)
    assert vf.variance_estimate(m, require_positive=False).degenerate


# analytic sweeps


def test_refined_bound_scaling(doubling):
    _, _, m = doubling
    ctx = vf.lemma_context(m)
    a = vf.refined_fourier_bound(m, 64, ctx)
    b = vf.refined_fourier_bound(m, 256, ctx)
    assert a.ok and b.ok
    assert a.aux_ratio <= 1 / 8
    assert a.rhs == pytest.approx(4 * b.rhs, rel=1e-12)
    assert b.T == pytest.approx(2 * a.T, rel=1e-12)


def test_disk_z_values_inside_disk():
    z = vf.disk_z_values(0.1, 50, seed=3)
    assert z.size == 50 and z[0] == 0
    assert np.all(np.abs(z) <= 0.1 * (1 + 1e-15))
    assert np.array_equal(z, vf.disk_z_values(0.1, 50, seed=3))


def test_pressure_sweep_rejects_large_z(doubling):
    _, _, m = doubling
    with pytest.raises(DomainError):
        vf.pressure_lemma_checks(m, z_grid=[m.delta0()])


def test_small_lemma_suite_doubling(doubling):
    _, _, m = doubling
    reps = vf.lemma_suite(m, z_count=8, u_samples=3, pairs=20, diameter_pairs=100, ring_n=(1, 16),
                          variance_n=(1, 16), refined_n=(64,))
    assert {r.check_id for r in reps} == {"lemma-epsilon", "lemma-diameter", "ring-lemma", "pressure-real-part",
                                          "pressure-taylor", "variance-rate", "refined-fourier"}
    assert all(r.ok for r in reps), [r.to_dict() for r in reps if not r.ok]


def test_lemma_suite_filter_and_negative_control(doubling):
    spec, f, _ = doubling
    low = dyn.ObservableSpec("cos1", f.func, 0.5, f.lip_seminorm)
    m = tr.model_for(spec, low, 1024)
    reps = vf.lemma_suite(m, only=["5.1"], z_count=6, u_samples=2, pairs=20)
    assert [r.check_id for r in reps] == ["lemma-epsilon"]
    assert not reps[0].ok
    with pytest.raises(DomainError):
        vf.lemma_suite(m, only=["9.9"])


# experiment


def test_small_experiment_respects_feller_and_is_deterministic(doubling):
    spec, f, m = doubling
    a = vf.be_experiment(spec, f, [4, 16], 20_000, seed=5, model=m, beta_band=None, threads=1)
    b = vf.be_experiment(spec, f, [4, 16], 20_000, seed=5, model=m, beta_band=None, threads=2)
    assert a.to_dict() == b.to_dict()
    for row in a.rows:
        assert row.distance - row.slack <= row.feller + row.feller_quad
        assert row.feller < row.certificate
        assert row.slack_ratio > 1e3


def test_experiment_reports_failure_with_payload(doubling):
    spec, f, m = doubling
    with pytest.raises(VerificationFailure) as info:
        vf.be_experiment(spec, f, [4, 16], 10_000, seed=1, model=m, beta_band=(10.0, 11.0))
    assert info.value.report.rows and "fitted rate" in str(info.value)


def test_experiment_needs_enough_samples(doubling):
    spec, f, m = doubling
    with pytest.raises(DomainError):
        vf.be_experiment(spec, f, [4], 100, seed=0, model=m)


# cone sweeps


def test_small_cone_lab_passes_and_repeats():
    a = vf.cone_lab(dim=3, matrices=60, seed=2, comparisons=10)
    b = vf.cone_lab(dim=3, matrices=60, seed=2, comparisons=10)
    assert all(r.ok for r in a)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert vf.cone_lab(dim=3, matrices=60, seed=3, comparisons=0)[0].worst_case != a[0].worst_case


def test_cone_lab_rejects_bad_dimension():
    with pytest.raises(DomainError):
        vf.cone_lab(dim=1)
