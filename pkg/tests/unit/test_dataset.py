import math

import numpy as np
import pytest

from koopid.constants import NOISE_STD, RHO_BAR
from koopid.dataset import (
    DuffingParams,
    Episode,
    ForcingSpec,
    NoiseSpec,
    add_noise,
    duffing_step,
    episode_from_csv,
    episode_to_csv,
    generate_duffing,
    load_episode_set,
    noise_std_for_snr,
    noisy_copies,
    save_episode_set,
    simulate_duffing,
    snr_db,
    snr_db_episodes,
)
from koopid.errors import DimensionError, InvalidInputError, SimulationDivergedError
from koopid.matlib import spectral_radius


@pytest.mark.parametrize(
    "x, expected",
    [
        ((0.0, 0.0), (0.0, 0.0)),
        ((1.0, 0.0), (1.0, -0.0101)),
        ((0.0, 1.0), (0.01, 0.999)),
    ],
)
def test_duffing_step(x, expected):
    result = duffing_step(DuffingParams(), np.array(x), 0.0)
    np.testing.assert_allclose(result, expected, rtol=1e-12, atol=1e-15)


def test_duffing_forcing_enters_acceleration():
    p = DuffingParams()
    result = duffing_step(p, np.zeros(2), 0.5)
    assert result[1] == pytest.approx(p.dt * 0.5 / p.mass)


def test_generate_zero_forcing_at_rest():
    episodes = generate_duffing(
        DuffingParams(), ForcingSpec(kind="zero"), T=20, x0=(0, 0)
    )
    assert len(episodes) == 1
    assert np.all(episodes[0].states == 0.0)
    assert episodes[0].states.shape == (2, 21)
    assert episodes[0].inputs.shape == (1, 20)


def test_generate_is_deterministic():
    forcing = ForcingSpec()
    a = generate_duffing(DuffingParams(), forcing, T=50, count=3, seed=9)
    b = generate_duffing(DuffingParams(), forcing, T=50, count=3, seed=9)
    c = generate_duffing(DuffingParams(), forcing, T=50, count=3, seed=10)
    assert [e.id for e in a] == ["000", "001", "002"]
    for ea, eb in zip(a, b):
        np.testing.assert_array_equal(ea.states, eb.states)
        np.testing.assert_array_equal(ea.inputs, eb.inputs)
    assert not np.array_equal(a[0].states, c[0].states)


def test_random_initial_states_inside_box():
    episodes = generate_duffing(DuffingParams(), ForcingSpec(), T=5, count=10, seed=1)
    x0 = np.array([e.states[:, 0] for e in episodes])
    assert np.all(np.abs(x0) <= 1.0)


def test_unforced_energy_decays_period_by_period():
    p = DuffingParams()
    (e,) = generate_duffing(p, ForcingSpec(kind="zero"), T=2000, x0=(1.0, 0.0))
    energy = p.energy(e.states)
    period = int(round(2 * math.pi / p.dt))  # natural frequency 1 rad/s
    windows = [energy[i : i + period].mean() for i in range(0, 2000 - period, period)]
    assert all(b < a for a, b in zip(windows, windows[1:]))
    assert energy[-1] < energy[0]


@pytest.mark.parametrize("kind", ["sinusoid", "random"])
def test_forcing_amplitude(kind):
    rng = np.random.default_rng(0)
    f = ForcingSpec(kind=kind, amplitude=0.2).signal(5000, 0.01, rng)
    assert f.shape == (5000,)
    if kind == "random":
        assert f.std() == pytest.approx(0.2)
    else:
        assert np.max(np.abs(f)) <= 0.2 + 1e-12


def test_forcing_validation():
    with pytest.raises(InvalidInputError):
        ForcingSpec(kind="chirp")
    with pytest.raises(InvalidInputError):
        rng = np.random.default_rng()
        ForcingSpec(kind="random", cutoff=100.0).signal(10, 0.01, rng)


def test_divergence_names_the_step():
    with pytest.raises(SimulationDivergedError) as info:
        simulate_duffing(DuffingParams(), (1e6, 0.0), np.zeros(50), "007")
    assert 1 <= info.value.step <= 50
    assert info.value.episode_id == "007"


def _episode(states, inputs=None):
    states = np.atleast_2d(states)
    if inputs is None:
        inputs = np.zeros((1, states.shape[1] - 1))
    return Episode(id="000", dt=0.01, states=states, inputs=inputs)


def test_add_noise_zero_std_is_identity():
    e = _episode(np.arange(12.0).reshape(2, 6))
    noisy = add_noise(e, NoiseSpec(std=0.0, seed=1))
    np.testing.assert_array_equal(noisy.states, e.states)
    np.testing.assert_array_equal(noisy.inputs, e.inputs)


def test_add_noise_variance_and_exact_inputs():
    inputs = np.random.default_rng(3).standard_normal((1, 50000))
    e = _episode(np.zeros((2, 50001)), inputs)
    noisy = add_noise(e, NoiseSpec(std=NOISE_STD, seed=4))
    diff = noisy.states - e.states
    assert diff.size >= 100000
    assert diff.var() == pytest.approx(0.02, rel=0.02)
    assert np.array_equal(noisy.inputs, e.inputs)
    assert noisy.states.shape == e.states.shape


def test_add_noise_is_seeded():
    e = _episode(np.zeros((2, 11)))
    a = add_noise(e, NoiseSpec(std=0.1, seed=5))
    b = add_noise(e, NoiseSpec(std=0.1, seed=5))
    np.testing.assert_array_equal(a.states, b.states)


def test_add_noise_rejects_negative_std():
    with pytest.raises(InvalidInputError):
        NoiseSpec(std=-1.0)


def test_snr_known_levels():
    clean = _episode(np.random.default_rng(0).standard_normal((2, 101)))
    doubled = _episode(2 * clean.states)
    scaled = _episode(1.1 * clean.states)
    assert snr_db(clean, doubled) == pytest.approx(0.0, abs=1e-12)
    assert snr_db(clean, scaled) == pytest.approx(20.0, abs=1e-9)
    assert snr_db(clean, clean) == math.inf


def test_snr_decreases_with_noise():
    clean = _episode(np.sin(np.linspace(0, 20, 2 * 501)).reshape(2, 501))
    levels = [
        snr_db(clean, add_noise(clean, NoiseSpec(std=s, seed=0)))
        for s in (0.01, 0.1, 1)
    ]
    assert levels[0] > levels[1] > levels[2]


def test_noise_std_for_snr_hits_target():
    clean = generate_duffing(DuffingParams(), ForcingSpec(), T=2000, count=4, seed=2)
    std = noise_std_for_snr(clean, 20.0)
    noisy = noisy_copies(clean, std, seed=0)
    assert snr_db_episodes(clean, noisy) == pytest.approx(20.0, abs=0.2)
    assert noise_std_for_snr(clean, math.inf) == 0.0


def test_noisy_copies_use_distinct_streams():
    clean = [_episode(np.zeros((2, 101))) for _ in range(2)]
    noisy = noisy_copies(clean, 0.1, seed=3)
    assert not np.array_equal(noisy[0].states, noisy[1].states)


def test_episode_validation():
    with pytest.raises(DimensionError):
        Episode(id="a", dt=0.1, states=np.zeros((2, 5)), inputs=np.zeros((1, 5)))
    with pytest.raises(InvalidInputError):
        Episode(id="a", dt=0.0, states=np.zeros((2, 5)), inputs=np.zeros((1, 4)))
    with pytest.raises(InvalidInputError):
        bad = np.full((2, 5), np.nan)
        Episode(id="a", dt=0.1, states=bad, inputs=np.zeros((1, 4)))
    e = Episode(id="a", dt=0.1, states=np.zeros((2, 5)), inputs=np.empty((0, 0)))
    assert e.inputs.shape == (0, 4)


def test_csv_layout_and_round_trip():
    (e,) = generate_duffing(DuffingParams(), ForcingSpec(), T=10, seed=0)
    text = episode_to_csv(e)
    lines = text.splitlines()
    assert lines[0] == "t,x1,x2,u1"
    assert len(lines) == 12
    assert lines[1].startswith("0.0,")
    assert lines[-1].endswith(",")
    back = episode_from_csv(text, e.id)
    np.testing.assert_array_equal(back.states, e.states)
    np.testing.assert_array_equal(back.inputs, e.inputs)
    assert back.dt == pytest.approx(e.dt)


def test_csv_without_inputs():
    states = np.arange(6.0).reshape(2, 3)
    e = Episode(id="x", dt=0.5, states=states, inputs=np.empty((0, 2)))
    back = episode_from_csv(episode_to_csv(e), "x", dt=0.5)
    assert back.input_dim == 0
    np.testing.assert_array_equal(back.states, e.states)


def test_csv_rejects_bad_header():
    with pytest.raises(InvalidInputError):
        episode_from_csv("time,x1\n0,1\n1,2\n", "bad")
    with pytest.raises(InvalidInputError):
        episode_from_csv("t,x1,u1\n0,1,2\n1,2,3\n", "bad")


def test_episode_set_round_trip(tmp_path):
    episodes = generate_duffing(DuffingParams(), ForcingSpec(), T=15, count=3, seed=4)
    roles = {"000": "train", "001": "train", "002": "test"}
    written = save_episode_set(tmp_path / "set", episodes, roles)
    assert len(written) == 4
    assert (tmp_path / "set" / "meta.json").exists()
    loaded = load_episode_set(tmp_path / "set")
    assert [e.id for e in loaded.episodes] == ["000", "001", "002"]
    assert [e.id for e in loaded.train] == ["000", "001"]
    assert [e.id for e in loaded.test] == ["002"]
    np.testing.assert_array_equal(loaded.get("001").states, episodes[1].states)
    with pytest.raises(InvalidInputError):
        loaded.get("999")


def test_save_episode_set_requires_roles(tmp_path):
    episodes = generate_duffing(DuffingParams(), ForcingSpec(), T=5, count=1)
    with pytest.raises(InvalidInputError):
        save_episode_set(tmp_path, episodes, {})


def test_linearised_step_is_slower_than_rho_bar():
    p = DuffingParams()
    h = 1e-7
    jac = np.column_stack(
        [duffing_step(p, h * np.eye(2)[i], 0.0) / h for i in range(2)]
    )
    np.testing.assert_allclose(jac, [[1.0, 0.01], [-0.01, 0.999]], atol=1e-9)
    radius = spectral_radius(jac)
    assert radius == pytest.approx(math.sqrt(0.9991), rel=1e-9)
    assert radius > RHO_BAR
