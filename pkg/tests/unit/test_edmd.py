import numpy as np
import pytest

from koopid.dataset import Episode
from koopid.edmd import KoopmanModel, edmd_backward, edmd_forward
from koopid.errors import DimensionError, InvalidInputError, NumericError
from koopid.lifting import LiftingSpec
from koopid.snapshots import build_snapshots, gram_backward, gram_forward


def _grams(episodes, spec):
    s = build_snapshots(episodes, spec)
    return gram_forward(s), gram_backward(s)


def test_scalar_decay_forward_and_backward(scalar_decay):
    spec = LiftingSpec.identity(1, 0)
    gf, gb = _grams([scalar_decay], spec)
    forward = edmd_forward(gf, spec)
    backward = edmd_backward(gb, spec)
    assert forward.A[0, 0] == pytest.approx(0.5, abs=1e-10)
    assert backward.A[0, 0] == pytest.approx(2.0, abs=1e-8)
    assert forward.B.shape == (1, 0)
    assert forward.direction == "forward"
    assert backward.direction == "backward"
    assert forward.method == "edmd"


def test_forward_recovers_input_gain(make_linear_episodes):
    spec = LiftingSpec.identity(1, 1)
    gf, _ = _grams(make_linear_episodes(0.5, 0.2, steps=100), spec)
    model = edmd_forward(gf, spec)
    np.testing.assert_allclose(model.U, [[0.5, 0.2]], atol=1e-8)


def test_rank_one_gives_least_norm_solution():
    e = Episode(id="000", dt=0.1, states=[[1.0, 1.0]], inputs=[[1.0]])
    spec = LiftingSpec.identity(1, 1)
    gf, gb = _grams([e], spec)
    np.testing.assert_allclose(edmd_forward(gf, spec).U, [[0.5, 0.5]], atol=1e-12)
    np.testing.assert_allclose(edmd_backward(gb, spec).U, [[0.5, 0.5]], atol=1e-12)


def test_backward_inverts_dynamics(make_linear_episodes, stable_system):
    A, B = stable_system
    spec = LiftingSpec.identity(3, 1)
    gf, gb = _grams(make_linear_episodes(A, B, steps=200, count=3), spec)
    forward = edmd_forward(gf, spec)
    backward = edmd_backward(gb, spec)
    A_inv = np.linalg.inv(A)
    np.testing.assert_allclose(forward.A, A, atol=1e-8)
    np.testing.assert_allclose(forward.B, B, atol=1e-8)
    np.testing.assert_allclose(backward.A, A_inv, atol=1e-6)
    np.testing.assert_allclose(backward.B, -A_inv @ B, atol=1e-6)


def test_direction_mismatch_is_rejected(scalar_decay):
    spec = LiftingSpec.identity(1, 0)
    gf, gb = _grams([scalar_decay], spec)
    with pytest.raises(InvalidInputError):
        edmd_forward(gb, spec)
    with pytest.raises(InvalidInputError):
        edmd_backward(gf, spec)


def test_spec_mismatch_is_rejected(scalar_decay):
    gf, _ = _grams([scalar_decay], LiftingSpec.identity(1, 0))
    with pytest.raises(DimensionError):
        edmd_forward(gf, LiftingSpec.identity(2, 0))


def test_model_validation():
    spec = LiftingSpec.identity(2, 1)
    model = KoopmanModel(A=np.eye(2), B=np.ones((2, 1)), spec=spec)
    assert model.U.shape == (2, 3)
    assert model.p_theta == 2 and model.p_upsilon == 1
    with pytest.raises(ValueError):
        model.A[0, 0] = 5.0
    with pytest.raises(DimensionError):
        KoopmanModel(A=np.eye(3), B=np.ones((3, 1)), spec=spec)
    with pytest.raises(NumericError):
        KoopmanModel(A=np.full((2, 2), np.inf), B=np.ones((2, 1)), spec=spec)
    with pytest.raises(InvalidInputError):
        KoopmanModel(A=np.eye(2), B=np.ones((2, 1)), spec=spec, method="dmd")
    bare = LiftingSpec.identity(2, 0)
    no_input = KoopmanModel(A=np.eye(2), B=np.empty((0, 0)), spec=bare)
    assert no_input.B.shape == (2, 0)
