import numpy as np
import pytest

from koopid.dataset import Episode
from koopid.errors import DimensionError, InvalidInputError
from koopid.lifting import LiftingSpec, lift_state
from koopid.snapshots import GramPair, build_snapshots, gram_backward, gram_forward


def _single_step(x0, x1, u0):
    return Episode(id="000", dt=0.1, states=[[x0, x1]], inputs=[[u0]])


def test_one_episode_columns(make_linear_episodes, rng):
    (e,) = make_linear_episodes([[0.9, 0.1], [0.0, 0.5]], [[1.0], [0.0]], steps=3)
    spec = LiftingSpec(
        state_dim=2,
        input_dim=1,
        rbf_count=2,
        rbf_centers=rng.standard_normal((2, 5)),
        seed=0,
    )
    s = build_snapshots([e], spec)
    assert s.q == 3
    assert s.p_theta == spec.lifted_state_dim
    assert s.p_upsilon == 1
    lifted = lift_state(spec, e.states[:, 0]).values
    expected = np.concatenate([lifted, e.inputs[:, 0]])
    np.testing.assert_array_equal(s.psi[:, 0], expected)


def test_pairs_never_cross_episodes(make_linear_episodes):
    episodes = make_linear_episodes(0.5, 1.0, steps=3, count=2)
    s = build_snapshots(episodes, LiftingSpec.identity(1, 1))
    assert s.q == 6
    # last pair of episode 0 ends at its own final sample
    assert s.theta_plus[0, 2] == episodes[0].states[0, 3]
    assert s.psi[0, 3] == episodes[1].states[0, 0]
    for col in range(6):
        assert s.theta_plus[0, col] == pytest.approx(
            0.5 * s.psi[0, col] + s.psi[1, col]
        )


def test_scalar_decay_next_states(scalar_decay):
    s = build_snapshots([scalar_decay], LiftingSpec.identity(1, 0))
    np.testing.assert_allclose(s.theta_plus[0, :3], [0.5, 0.25, 0.125])
    assert s.psi.shape == (1, 50)
    assert s.p_upsilon == 0


def test_block_layout(make_linear_episodes):
    episodes = make_linear_episodes(0.7 * np.eye(2), np.ones((2, 1)), steps=10, count=2)
    s = build_snapshots(episodes, LiftingSpec.identity(2, 1))
    np.testing.assert_array_equal(s.psi[:2], s.theta)
    np.testing.assert_array_equal(s.psi_hat[:2], s.theta_plus)
    np.testing.assert_array_equal(s.psi[2:], s.psi_hat[2:])


def test_build_rejects_empty_and_mismatched():
    with pytest.raises(InvalidInputError):
        build_snapshots([], LiftingSpec.identity(1, 1))
    with pytest.raises(DimensionError):
        build_snapshots([_single_step(1.0, 0.9, 0.0)], LiftingSpec.identity(2, 1))


def test_gram_forward_single_column():
    s = build_snapshots([_single_step(1.0, 0.9, 0.0)], LiftingSpec.identity(1, 1))
    g = gram_forward(s)
    assert g.q == 1
    assert g.direction == "forward"
    np.testing.assert_allclose(g.G, [[0.9, 0.0]])
    np.testing.assert_allclose(g.H, [[1.0, 0.0], [0.0, 0.0]])


def test_gram_backward_single_column():
    s = build_snapshots([_single_step(1.0, 0.9, 0.0)], LiftingSpec.identity(1, 1))
    g = gram_backward(s)
    assert g.direction == "backward"
    np.testing.assert_allclose(g.G, [[0.9, 0.0]])
    np.testing.assert_allclose(g.H, [[0.81, 0.0], [0.0, 0.0]])


def test_gram_scales_quadratically(make_linear_episodes):
    episodes = make_linear_episodes(0.8, 0.5, steps=20)
    doubled = [
        Episode(id=e.id, dt=e.dt, states=2 * e.states, inputs=2 * e.inputs)
        for e in episodes
    ]
    spec = LiftingSpec.identity(1, 1)
    g1 = gram_forward(build_snapshots(episodes, spec))
    g2 = gram_forward(build_snapshots(doubled, spec))
    np.testing.assert_allclose(g2.G, 4 * g1.G)
    np.testing.assert_allclose(g2.H, 4 * g1.H)


def test_gram_matches_snapshot_products(make_linear_episodes):
    A = [[0.5, 0.2], [-0.1, 0.9]]
    episodes = make_linear_episodes(A, [[1.0], [0.3]], steps=30, count=3)
    s = build_snapshots(episodes, LiftingSpec.identity(2, 1))
    gf = gram_forward(s)
    gb = gram_backward(s)
    np.testing.assert_allclose(gf.G, s.theta_plus @ s.psi.T / s.q)
    np.testing.assert_allclose(gf.H, s.psi @ s.psi.T / s.q)
    np.testing.assert_allclose(gb.G, s.theta @ s.psi_hat.T / s.q)
    np.testing.assert_allclose(gb.H, s.psi_hat @ s.psi_hat.T / s.q)
    assert np.array_equal(gf.H, gf.H.T)
    assert np.all(np.linalg.eigvalsh(gf.H) >= -1e-12)


def test_gram_pair_validation():
    with pytest.raises(InvalidInputError):
        GramPair(G=np.zeros((1, 2)), H=np.eye(2), direction="sideways", q=1)
    with pytest.raises(DimensionError):
        GramPair(G=np.zeros((1, 2)), H=np.eye(3), direction="forward", q=1)
