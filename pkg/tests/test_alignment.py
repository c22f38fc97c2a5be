import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsirm_ns.alignment import RigidTransform, align_across_groups, align_chain, procrustes_fit, procrustes_residual
from lsirm_ns.chain import PosteriorChain
from lsirm_ns.errors import ContractError, DegeneracyError
from lsirm_ns.report import pairwise_distances


def rotation(angle, reflect=False):
    r = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return r @ np.diag([1.0, -1.0]) if reflect else r


def chain_from_positions(z, w, lp=None):
    s, n = z.shape[:2]
    p = w.shape[1]
    return PosteriorChain(
        beta=np.zeros((s, p)),
        theta=np.zeros((s, n)),
        z=z,
        w=w,
        gamma=np.ones(s),
        sigma_theta_sq=np.ones(s),
        log_posterior=np.arange(s, dtype=float) if lp is None else lp,
    )


def test_thirty_degree_example():
    src = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    tgt = src @ rotation(np.pi / 6).T
    t = procrustes_fit(src, tgt)
    np.testing.assert_allclose(t.rotation, rotation(np.pi / 6), atol=1e-12)
    np.testing.assert_allclose(t.translation, 0.0, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.booleans())
@settings(max_examples=50, deadline=None)
def test_planted_motion_recovered(seed, reflect):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(8, 2))
    r = rotation(rng.uniform(0, 2 * np.pi), reflect)
    t = rng.normal(scale=5, size=2)
    fit = procrustes_fit(src, src @ r.T + t)
    np.testing.assert_allclose(fit.rotation, r, atol=1e-10)
    np.testing.assert_allclose(fit.translation, t, atol=1e-10)
    assert procrustes_residual(fit, src, src @ r.T + t) < 1e-10
    assert fit.determinant == pytest.approx(-1.0 if reflect else 1.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_fit_beats_random_motions(seed):
    rng = np.random.default_rng(seed)
    src, tgt = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    best = procrustes_residual(procrustes_fit(src, tgt), src, tgt)
    for _ in range(20):
        other = RigidTransform(rotation(rng.uniform(0, 2 * np.pi), rng.random() < 0.5), rng.normal(size=2))
        assert best <= procrustes_residual(other, src, tgt) + 1e-12


def test_degenerate_source_raises():
    with pytest.raises(DegeneracyError):
        procrustes_fit(np.ones((4, 2)), np.random.default_rng(0).normal(size=(4, 2)))


def test_shape_mismatch_raises():
    with pytest.raises(ContractError):
        procrustes_fit(np.zeros((3, 2)), np.zeros((4, 2)))


def test_compose_applies_inner_first(rng):
    a = RigidTransform(rotation(0.3), [1.0, 2.0])
    b = RigidTransform(rotation(1.1, True), [-0.5, 0.0])
    pts = rng.normal(size=(5, 2))
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


@pytest.fixture
def planted_chain(rng):
    z0, w0 = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    zs, ws = [], []
    for _ in range(10):
        r = rotation(rng.uniform(0, 2 * np.pi), rng.random() < 0.5)
        t = rng.normal(size=2)
        zs.append(z0 @ r.T + t)
        ws.append(w0 @ r.T + t)
    return chain_from_positions(np.array(zs), np.array(ws)), z0, w0


def test_align_chain_removes_planted_motions(planted_chain):
    ch, _, _ = planted_chain
    al = align_chain(ch)
    ref = al.reference_index
    assert ref == 9
    for s in range(len(al)):
        np.testing.assert_allclose(al.z[s], ch.z[ref], atol=1e-10)
        np.testing.assert_allclose(al.w[s], ch.w[ref], atol=1e-10)
        np.testing.assert_allclose(ch.z[s] @ al.rotations[s].T + al.translations[s], al.z[s], atol=1e-12)


def test_align_chain_is_idempotent(rng):
    ch = chain_from_positions(rng.normal(size=(6, 5, 2)), rng.normal(size=(6, 4, 2)))
    once = align_chain(ch)
    twice = align_chain(once)
    np.testing.assert_allclose(twice.z, once.z, atol=1e-10)
    np.testing.assert_allclose(twice.w, once.w, atol=1e-10)


def test_align_chain_items_only(planted_chain):
    al = align_chain(planted_chain[0], fit_on="items")
    np.testing.assert_allclose(al.w, np.broadcast_to(al.w[al.reference_index], al.w.shape), atol=1e-10)


def test_cross_group_example(rng):
    w = rng.normal(size=(7, 2))
    z = rng.normal(size=(4, 2))
    a = align_chain(chain_from_positions(np.array([z, z]), np.array([w, w])))
    r, t = rotation(np.pi / 4), np.array([1.0, -2.0])
    b = align_chain(chain_from_positions(np.array([z @ r.T + t] * 2), np.array([w @ r.T + t] * 2)))
    moved = align_across_groups(a, b)
    np.testing.assert_allclose(moved.w, a.w, atol=1e-10)
    np.testing.assert_allclose(moved.group_transform["rotation"], r.T, atol=1e-10)


def test_cross_group_preserves_within_group_distances(rng):
    a = align_chain(chain_from_positions(rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 6, 2))))
    b = align_chain(chain_from_positions(rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 6, 2))))
    moved = align_across_groups(a, b)
    for s in range(len(b)):
        before = np.vstack([b.z[s], b.w[s]])
        after = np.vstack([moved.z[s], moved.w[s]])
        np.testing.assert_allclose(pairwise_distances(after), pairwise_distances(before), atol=1e-10)


def test_cross_group_needs_aligned_chains(rng):
    ch = chain_from_positions(rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 5, 2)))
    with pytest.raises(ContractError):
        align_across_groups(ch, align_chain(ch))


def test_cross_group_needs_same_items(rng):
    a = align_chain(chain_from_positions(rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 5, 2))))
    b = align_chain(chain_from_positions(rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 6, 2))))
    with pytest.raises(ContractError):
        align_across_groups(a, b)
