import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsirm_ns import _ns_kernel
from lsirm_ns.clustering import assign_items
from lsirm_ns.config import NsConfig
from lsirm_ns.data import LatentConfig
from lsirm_ns.errors import ContractError, DegeneracyError
from lsirm_ns.ns import (
    Domain2D,
    NsState,
    UnitFrame,
    alpha_prior_bounds,
    fit_ns,
    kernel_mass,
    load_ensemble,
    log_kernel,
    make_domain,
    ns_log_likelihood,
    ns_log_posterior,
    omega_prior_bounds,
    run_ensemble,
    save_ensemble,
)
from lsirm_ns.report import match_labels

from .conftest import THOMAS_OMEGA, THOMAS_PARENTS


def ll_oracle(pts, s, dom):
    total = dom.area
    for c in s.centers:
        mx = 0.5 * (math.erf((dom.x1 - c[0]) / (s.omega * math.sqrt(2))) - math.erf((dom.x0 - c[0]) / (s.omega * math.sqrt(2))))
        my = 0.5 * (math.erf((dom.y1 - c[1]) / (s.omega * math.sqrt(2))) - math.erf((dom.y0 - c[1]) / (s.omega * math.sqrt(2))))
        total -= s.alpha * mx * my
    for p in pts:
        dens = 0.0
        for c in s.centers:
            d2 = (p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2
            dens += s.alpha * math.exp(-d2 / (2 * s.omega**2)) / (2 * math.pi * s.omega**2)
        total += math.log(dens)
    return total


def random_state(rng, dom, m):
    pts = np.column_stack([rng.uniform(dom.x0, dom.x1, m), rng.uniform(dom.y0, dom.y1, m)])
    return NsState(pts, float(rng.uniform(1, 20)), float(rng.uniform(0.05, 0.5)))


def test_domain_examples():
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    d0 = make_domain(pts, margin=0.0)
    assert d0.to_list() == [0.0, 1.0, 0.0, 1.0] and d0.area == 1.0
    d1 = make_domain(pts)
    np.testing.assert_allclose(d1.to_list(), [-0.1, 1.1, -0.1, 1.1])
    assert d1.area == pytest.approx(1.44)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_domain_contains_points_strictly(seed):
    pts = np.random.default_rng(seed).normal(size=(10, 2))
    d = make_domain(pts)
    assert np.all(pts[:, 0] > d.x0) and np.all(pts[:, 0] < d.x1)
    assert np.all(pts[:, 1] > d.y0) and np.all(pts[:, 1] < d.y1)


def test_domain_degenerate_points():
    with pytest.raises(DegeneracyError):
        make_domain(np.ones((3, 2)))
    d = make_domain(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert d.area > 0


def test_unit_frame_round_trip(rng):
    dom = Domain2D(-2.0, 3.0, 1.0, 5.0)
    frame = UnitFrame.for_domain(dom)
    assert frame.unit_domain(dom).area == pytest.approx(1.0)
    pts = rng.normal(size=(5, 2))
    np.testing.assert_allclose(frame.from_unit(frame.to_unit(pts)), pts, atol=1e-12)
    assert UnitFrame.for_domain(dom, standardize=False).unit_domain(dom).area == pytest.approx(dom.area)


def test_kernel_mass_center_and_corner():
    big = Domain2D(-10.0, 10.0, -10.0, 10.0)
    assert kernel_mass((0.0, 0.0), 0.1, big) == pytest.approx(1.0, abs=1e-12)
    assert kernel_mass((-10.0, -10.0), 0.1, big) == pytest.approx(0.25, abs=1e-12)


def test_kernel_mass_matches_quadrature():
    n = 2000
    g = (np.arange(n) + 0.5) / n
    omega, c = 0.2, (0.3, 0.7)
    kx = np.exp(-((g - c[0]) ** 2) / (2 * omega**2))
    ky = np.exp(-((g - c[1]) ** 2) / (2 * omega**2))
    quad = np.outer(ky, kx).sum() / n**2 / (2 * np.pi * omega**2)
    assert kernel_mass(c, omega, Domain2D(0, 1, 0, 1)) == pytest.approx(quad, abs=1e-6)


@given(st.floats(0.01, 1.0), st.floats(0.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_kernel_mass_grows_with_domain(omega, grow):
    small = Domain2D(0, 1, 0, 1)
    large = Domain2D(-grow, 1 + grow, 0, 1 + grow)
    a, b = kernel_mass((0.2, 0.9), omega, small), kernel_mass((0.2, 0.9), omega, large)
    assert 0 < a <= b <= 1


def test_ns_ll_empty_pattern():
    dom = Domain2D(-10, 10, -10, 10)
    s = NsState(np.array([[0.0, 0.0]]), 2.0, 0.1)
    assert ns_log_likelihood(np.empty((0, 2)), s, dom) == pytest.approx(dom.area - 2, abs=1e-12)


def test_ns_ll_single_point_at_center():
    dom = Domain2D(-10, 10, -10, 10)
    s = NsState(np.array([[0.0, 0.0]]), 1.0, 0.5)
    expected = dom.area - 1 + math.log(1 / (2 * math.pi * 0.25))
    assert ns_log_likelihood(np.array([[0.0, 0.0]]), s, dom) == pytest.approx(expected, abs=1e-12)


def test_ns_ll_matches_oracle(rng):
    dom = Domain2D(0.0, 1.0, 0.0, 1.5)
    for _ in range(100):
        m, p = int(rng.integers(1, 4)), int(rng.integers(0, 7))
        s = random_state(rng, dom, m)
        pts = np.column_stack([rng.uniform(0, 1, p), rng.uniform(0, 1.5, p)])
        assert ns_log_likelihood(pts, s, dom) == pytest.approx(ll_oracle(pts, s, dom), abs=1e-10)


def test_ns_ll_permutation_invariant(rng):
    dom = Domain2D(0, 1, 0, 1)
    s = random_state(rng, dom, 3)
    pts = rng.random((6, 2))
    perm = NsState(s.centers[::-1].copy(), s.alpha, s.omega)
    assert ns_log_likelihood(pts, perm, dom) == pytest.approx(ns_log_likelihood(pts, s, dom), abs=1e-12)


def test_ns_ll_rejects_outside_points():
    s = NsState(np.array([[0.5, 0.5]]), 1.0, 0.1)
    with pytest.raises(ContractError):
        ns_log_likelihood(np.array([[1.5, 0.5]]), s, Domain2D(0, 1, 0, 1))


def test_alpha_bounds_examples():
    assert alpha_prior_bounds(62, 1.0) == pytest.approx((6.2, 31.0), abs=1e-12)
    assert alpha_prior_bounds(62, 2.0) == pytest.approx((3.1, 15.5), abs=1e-12)
    lo, hi = alpha_prior_bounds(62, Domain2D(0, 2, 0, 1), 3, 8)
    assert 62 / (2 * lo) == pytest.approx(8) and 62 / (2 * hi) == pytest.approx(3)


def test_omega_bounds_scale_with_domain():
    cfg = NsConfig()
    a = omega_prior_bounds(Domain2D(0, 1, 0, 1), cfg)
    b = omega_prior_bounds(Domain2D(0, 2, 0, 2), cfg)
    assert 0 < a[0] < a[1] and b == pytest.approx((2 * a[0], 2 * a[1]))


def test_birth_then_death_restores_target(rng):
    dom = Domain2D(0, 1, 0, 1)
    pts = rng.random((9, 2))
    s = random_state(rng, dom, 3)
    lk = log_kernel(pts, s.centers, s.omega)
    masses = kernel_mass(s.centers, s.omega, dom)
    new = rng.random(2)
    extra = log_kernel(pts, new[None, :], s.omega)[0]
    extra_mass = kernel_mass(new, s.omega, dom)
    dummy = np.empty(len(pts))
    base = _ns_kernel.loglik(lk, masses, 3, -1, dummy, 0.0, False, s.alpha, dom.area, len(pts))
    born = _ns_kernel.loglik(lk, masses, 3, -1, extra, extra_mass, True, s.alpha, dom.area, len(pts))
    grown = NsState(np.vstack([s.centers, new]), s.alpha, s.omega)
    assert born == pytest.approx(ns_log_likelihood(pts, grown, dom), abs=1e-10)
    lk4 = np.vstack([lk, extra[None, :]])
    masses4 = np.append(masses, extra_mass)
    died = _ns_kernel.loglik(lk4, masses4, 4, 3, dummy, 0.0, False, s.alpha, dom.area, len(pts))
    assert died == base
    assert base == pytest.approx(ns_log_likelihood(pts, s, dom), abs=1e-10)


@pytest.fixture(scope="module")
def short_fit(thomas_truth, unit_square):
    cfg = NsConfig(n_iter=4000, burn_in=1000)
    return cfg, fit_ns(thomas_truth.points, unit_square, cfg, 5)


def test_fit_is_deterministic(short_fit, thomas_truth, unit_square):
    cfg, a = short_fit
    b = fit_ns(thomas_truth.points, unit_square, cfg, 5)
    np.testing.assert_array_equal(a.state.centers, b.state.centers)
    assert a.log_posterior == b.log_posterior and a.state.alpha == b.state.alpha


def test_fit_respects_bounds_and_domain(short_fit, thomas_truth, unit_square):
    cfg, f = short_fit
    lo, hi = alpha_prior_bounds(len(thomas_truth.points), unit_square, cfg.m_min, cfg.m_max)
    olo, ohi = omega_prior_bounds(unit_square, cfg)
    assert lo <= f.state.alpha <= hi and olo <= f.state.omega <= ohi
    assert unit_square.contains(f.state.centers).all()
    assert f.log_posterior == pytest.approx(ns_log_posterior(thomas_truth.points, f.state, unit_square), abs=1e-8)
    assert len(f.m_trace) == cfg.n_iter


def test_fit_needs_enough_iterations(thomas_truth, unit_square):
    with pytest.raises(ContractError):
        fit_ns(thomas_truth.points, unit_square, NsConfig(n_iter=500, burn_in=100), 1)


def test_fit_recovers_thomas_parents(thomas_truth, unit_square):
    f = fit_ns(thomas_truth.points, unit_square, NsConfig(), 777)
    assert f.n_centers == 5
    match = match_labels({k: p for k, p in enumerate(THOMAS_PARENTS)}, {k: c for k, c in enumerate(f.state.centers)})
    assert max(match.distances.values()) < 2 * THOMAS_OMEGA


def test_quarter_turn_equivariance(thomas_truth, unit_square):
    cfg = NsConfig(n_iter=10000, burn_in=2500)
    turn = np.array([[0.0, -1.0], [1.0, 0.0]])
    rotated = (thomas_truth.points - 0.5) @ turn.T + 0.5
    a = fit_ns(thomas_truth.points, unit_square, cfg, 21)
    b = fit_ns(rotated, unit_square, cfg, 21)
    assert a.n_centers == b.n_centers
    expected = (a.state.centers - 0.5) @ turn.T + 0.5
    match = match_labels(dict(enumerate(expected)), dict(enumerate(b.state.centers)))
    assert max(match.distances.values()) < THOMAS_OMEGA
    # assignments agree once b's centers are relabelled to a's
    to_a = np.array([match.mapping[j] for j in range(b.n_centers)])
    ia = assign_items(thomas_truth.points, a.state.centers)
    ib = to_a[assign_items(rotated, b.state.centers)]
    np.testing.assert_array_equal(ia, ib)


def test_small_ensemble_round_trip(tmp_path, thomas_truth, unit_square):
    cfg = NsConfig(n_runs=2, n_iter=2000, burn_in=500)
    e = run_ensemble(thomas_truth.points, unit_square, cfg, 3)
    assert len(e) == 2 and len(set(e.seeds)) == 2
    again = run_ensemble(thomas_truth.points, unit_square, cfg, 3)
    np.testing.assert_array_equal(e.counts, again.counts)
    back = load_ensemble(save_ensemble(e, tmp_path / "ens.csv"))
    for f, g in zip(e.fits, back.fits):
        np.testing.assert_array_equal(f.state.centers, g.state.centers)
        assert f.seed == g.seed and f.state.omega == g.state.omega
    assert back.domain.to_list() == unit_square.to_list()


def test_latent_config_input(thomas_truth, unit_square):
    labels = [f"p{k}" for k in range(len(thomas_truth.points))]
    cfg = NsConfig(n_iter=1000, burn_in=200)
    a = fit_ns(LatentConfig(tuple(labels), thomas_truth.points), unit_square, cfg, 9)
    b = fit_ns(thomas_truth.points, unit_square, cfg, 9)
    np.testing.assert_array_equal(a.state.centers, b.state.centers)
