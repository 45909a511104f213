# Pytest fixtures and configuration
import numpy as np
import pytest

from koopid.dataset import Episode


def simulate_linear(A, B, x0, inputs, episode_id="000", dt=0.1) -> Episode:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    inputs = np.asarray(inputs, dtype=float).reshape(-1, np.shape(inputs)[-1])
    B = np.asarray(B, dtype=float).reshape(m, inputs.shape[0])
    states = np.empty((m, inputs.shape[1] + 1))
    states[:, 0] = x0
    for k in range(inputs.shape[1]):
        states[:, k + 1] = A @ states[:, k] + B @ inputs[:, k]
    return Episode(id=episode_id, dt=dt, states=states, inputs=inputs)


@pytest.fixture
def make_linear_episodes():
    """
    Factory for noise-free episodes of ``x_{k+1} = A x_k + B u_k`` with
    Gaussian inputs and uniform initial states.
    """

    def _make(A, B=None, steps=100, count=1, seed=0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        m = A.shape[0]
        if B is None:
            B = np.zeros((m, 0))
        B = np.asarray(B, dtype=float).reshape(m, -1)
        rng = np.random.default_rng(seed)
        episodes = []
        for i in range(count):
            x0 = rng.uniform(-1.0, 1.0, size=m)
            u = rng.standard_normal((B.shape[1], steps))
            episodes.append(simulate_linear(A, B, x0, u, f"{i:03d}"))
        return episodes

    return _make


@pytest.fixture
def scalar_decay():
    """``x_{k+1} = 0.5 x_k`` from ``x_0 = 1`` over 50 steps, no inputs."""
    states = 0.5 ** np.arange(51.0)
    return Episode(id="000", dt=0.1, states=states[None, :], inputs=np.empty((0, 50)))


@pytest.fixture
def stable_system():
    """
    Invertible 3x3 A with real eigenvalues in (0.3, 0.9) and a 3x1 B.
    """
    rng = np.random.default_rng(7)
    V = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    lam = np.array([0.35, 0.6, 0.85])
    A = V @ np.diag(lam) @ np.linalg.inv(V)
    B = rng.standard_normal((3, 1))
    return A, B


@pytest.fixture
def linear_episode():
    """Single episode of a linear system from given x0 and inputs."""
    return simulate_linear


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
