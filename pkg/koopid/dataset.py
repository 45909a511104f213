# Duffing oscillator episodes, measurement noise, SNR, and episode-set files
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.signal

from .constants import (
    DUFFING_DAMPING,
    DUFFING_DT,
    DUFFING_K1,
    DUFFING_K2,
    DUFFING_MASS,
    DUFFING_STEPS,
    DUFFING_X0_BOX,
    EPISODE_FILE_TEMPLATE,
    EPISODE_META_FILE,
    FORCING_AMPLITUDE,
    FORCING_CUTOFF,
    FORCING_FREQUENCY,
)
from .errors import DimensionError, InvalidInputError, SimulationDivergedError
from .utils import atomic_write_text

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

FORCING_KINDS = ("zero", "sinusoid", "random")
ROLES = ("train", "test")


@dataclass(frozen=True, eq=False)
class Episode:
    """
    One contiguous trajectory sampled at a fixed interval.

    ``states`` is m x (T+1) and ``inputs`` is n x T; input ``k`` acts between
    state ``k`` and state ``k+1``.
    """

    id: str
    dt: float
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float, ndmin=2)
        inputs = np.array(self.inputs, dtype=float, ndmin=2)
        if self.dt <= 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if inputs.size == 0 and inputs.shape[-1] != states.shape[-1] - 1:
            inputs = np.empty((0, states.shape[-1] - 1))
        if states.ndim != 2 or inputs.ndim != 2:
            raise DimensionError("Episode states and inputs must be 2-D")
        if states.shape[1] != inputs.shape[1] + 1:
            raise DimensionError(
                f"Episode {self.id}: {states.shape[1]} state samples require "
                f"{states.shape[1] - 1} input samples, got {inputs.shape[1]}"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(inputs))):
            raise InvalidInputError(f"Episode {self.id} contains non-finite values")
        states.setflags(write=False)
        inputs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def state_dim(self) -> int:
        return self.states.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[0]

    @property
    def steps(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class DuffingParams:
    mass: float = DUFFING_MASS
    damping: float = DUFFING_DAMPING
    k1: float = DUFFING_K1
    k2: float = DUFFING_K2
    dt: float = DUFFING_DT

    def __post_init__(self):
        if self.mass <= 0:
            raise InvalidInputError(f"mass must be positive, got {self.mass}")
        if self.dt <= 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")

    def energy(self, states: np.ndarray) -> np.ndarray:
        """Kinetic plus potential energy of (position, velocity) columns."""
        pos, vel = np.asarray(states, dtype=float)
        return (
            0.5 * self.mass * vel**2
            + 0.5 * self.k1 * pos**2
            + 0.25 * self.k2 * pos**4
        )


@dataclass(frozen=True)
class ForcingSpec:
    """
    Excitation applied to the oscillator.

    ``random`` is Gaussian white noise through a 4th-order Butterworth low-pass
    at ``cutoff`` Hz, rescaled to standard deviation ``amplitude``.
    ``sinusoid`` uses ``frequency`` Hz with a per-episode random phase.
    """

    kind: str = "random"
    amplitude: float = FORCING_AMPLITUDE
    frequency: float = FORCING_FREQUENCY
    cutoff: float = FORCING_CUTOFF

    def __post_init__(self):
        if self.kind not in FORCING_KINDS:
            raise InvalidInputError(
                f"Forcing kind must be one of {FORCING_KINDS}, got {self.kind!r}"
            )
        if self.amplitude < 0:
            raise InvalidInputError(f"amplitude must be >= 0, got {self.amplitude}")

    def signal(self, steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "zero" or self.amplitude == 0:
            return np.zeros(steps)
        if self.kind == "sinusoid":
            phase = rng.uniform(0.0, 2.0 * math.pi)
            t = np.arange(steps) * dt
            return self.amplitude * np.sin(2.0 * math.pi * self.frequency * t + phase)
        nyquist = 0.5 / dt
        if not 0 < self.cutoff < nyquist:
            raise InvalidInputError(
                f"cutoff must lie in (0, {nyquist}) Hz, got {self.cutoff}"
            )
        sos = scipy.signal.butter(4, self.cutoff, fs=1.0 / dt, output="sos")
        raw = scipy.signal.sosfilt(sos, rng.standard_normal(steps))
        std = raw.std()
        return self.amplitude * raw / std if std > 0 else raw


@dataclass(frozen=True)
class NoiseSpec:
    std: Union[float, Sequence[float]] = 0.0
    seed: int = 0

    def __post_init__(self):
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if not np.all(np.isfinite(std)) or np.any(std < 0):
            raise InvalidInputError(f"Noise std must be finite and >= 0, got {std}")


@dataclass
class EpisodeSet:
    dt: float
    episodes: List[Episode]
    roles: Dict[str, str] = field(default_factory=dict)

    def with_role(self, role: str) -> List[Episode]:
        return [e for e in self.episodes if self.roles.get(e.id) == role]

    @property
    def train(self) -> List[Episode]:
        return self.with_role("train")

    @property
    def test(self) -> List[Episode]:
        return self.with_role("test")

    def get(self, episode_id: str) -> Episode:
        for e in self.episodes:
            if e.id == episode_id:
                return e
        raise InvalidInputError(f"No episode with id {episode_id!r}")


def duffing_step(p: DuffingParams, x, f: float) -> np.ndarray:
    """
    One forward-Euler step of ``m x'' + c x' + k1 x + k2 x^3 = f``.

    :param p: Oscillator parameters.
    :param x: (position, velocity).
    :param f: Applied force in N.
    :return: Next (position, velocity).
    """
    pos, vel = np.asarray(x, dtype=float)[:2]
    accel = (f - p.damping * vel - p.k1 * pos - p.k2 * pos**3) / p.mass
    return np.array([pos + p.dt * vel, vel + p.dt * accel])


def simulate_duffing(
    p: DuffingParams, x0, forcing: np.ndarray, episode_id: str = ""
) -> Episode:
    """
    Roll the Euler-discretized oscillator through a forcing sequence.

    :param p: Oscillator parameters.
    :param x0: Initial (position, velocity).
    :param forcing: Force samples, one per step.
    :return: Noise-free episode.
    """
    forcing = np.asarray(forcing, dtype=float)
    steps = forcing.shape[0]
    states = np.empty((2, steps + 1))
    states[:, 0] = np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            states[:, k + 1] = duffing_step(p, states[:, k], forcing[k])
            if not np.all(np.isfinite(states[:, k + 1])):
                raise SimulationDivergedError(k + 1, episode_id)
    return Episode(id=episode_id, dt=p.dt, states=states, inputs=forcing[None, :])


def generate_duffing(
    p: DuffingParams,
    forcing: ForcingSpec,
    T: int = DUFFING_STEPS,
    x0=None,
    count: int = 1,
    seed: int = 0,
    x0_box: Tuple[float, float] = DUFFING_X0_BOX,
) -> List[Episode]:
    """
    Simulate ``count`` noise-free Duffing episodes.

    Each episode draws its own generator from ``SeedSequence(seed)``, so the
    output depends only on the arguments. When ``x0`` is ``None`` the initial
    state is uniform in ``x0_box`` on both axes.

    :param p: Oscillator parameters.
    :param forcing: Excitation spec.
    :param T: Steps per episode (>= 2).
    :param x0: Fixed initial state, or None for randomized initial states.
    :param count: Number of episodes.
    :param seed: Dataset seed.
    :return: Episodes with ids ``000``, ``001``, ...
    """
    if T < 2:
        raise InvalidInputError(f"T must be >= 2, got {T}")
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    episodes = []
    width = max(3, len(str(count - 1)))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(count)):
        rng = np.random.default_rng(child)
        if x0 is None:
            start = rng.uniform(x0_box[0], x0_box[1], size=2)
        else:
            start = np.asarray(x0, dtype=float)
        signal = forcing.signal(T, p.dt, rng)
        episodes.append(simulate_duffing(p, start, signal, f"{i:0{width}d}"))
    log.info(f"Generated {count} Duffing episodes of {T} steps (seed {seed})")
    return episodes


def add_noise(e: Episode, spec: NoiseSpec) -> Episode:
    """
    Add i.i.d. zero-mean Gaussian measurement noise to every state entry.
    Inputs are left untouched.

    :param e: Clean episode.
    :param spec: Per-channel (or scalar) standard deviation and seed.
    :return: Noisy episode.
    """
    std = np.atleast_1d(np.asarray(spec.std, dtype=float))
    if std.size not in (1, e.state_dim):
        raise DimensionError(
            f"Noise std has {std.size} entries, episode has {e.state_dim} states"
        )
    if np.all(std == 0):
        return replace(e)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(e.states.shape) * std.reshape(-1, 1)
    return replace(e, states=e.states + noise)


def _pooled_variance(blocks: List[np.ndarray]) -> float:
    stacked = np.hstack(blocks)
    return float(np.sum(np.var(stacked, axis=1)))


def snr_db_episodes(clean: List[Episode], noisy: List[Episode]) -> float:
    """
    SNR in dB over an episode list, variances summed over state channels.

    :return: ``10 log10(var_x / var_n)``, ``inf`` for zero noise.
    """
    if len(clean) != len(noisy):
        raise DimensionError("Clean and noisy episode lists differ in length")
    for c, n in zip(clean, noisy):
        if c.states.shape != n.states.shape:
            raise DimensionError(
                f"Episode {c.id}: shapes {c.states.shape} and {n.states.shape} differ"
            )
    var_x = _pooled_variance([c.states for c in clean])
    var_n = _pooled_variance([n.states - c.states for c, n in zip(clean, noisy)])
    if var_n == 0:
        return math.inf
    return 10.0 * math.log10(var_x / var_n)


def snr_db(clean: Episode, noisy: Episode) -> float:
    """SNR in dB of a noisy episode against its clean counterpart."""
    return snr_db_episodes([clean], [noisy])


def noise_std_for_snr(episodes: List[Episode], target_db: float) -> float:
    """
    Scalar noise standard deviation that yields ``target_db`` in expectation.

    :param episodes: Clean episodes.
    :param target_db: Target SNR in dB (``inf`` gives 0).
    :return: Standard deviation applied to every channel.
    """
    if math.isinf(target_db) and target_db > 0:
        return 0.0
    var_x = _pooled_variance([e.states for e in episodes])
    m = episodes[0].state_dim
    return math.sqrt(var_x / m / 10.0 ** (target_db / 10.0))


def noisy_copies(episodes: List[Episode], std, seed: int) -> List[Episode]:
    """Add noise to each episode with a seed derived from (seed, index)."""
    children = np.random.SeedSequence(seed).spawn(len(episodes))
    return [
        add_noise(e, NoiseSpec(std=std, seed=int(c.generate_state(1)[0])))
        for e, c in zip(episodes, children)
    ]


def episode_to_csv(e: Episode) -> str:
    """
    Serialize an episode as CSV text with header ``t,x1..xm,u1..un``. The last
    row has empty input cells.
    """
    rows = e.steps + 1
    data = {"t": np.arange(rows) * e.dt}
    for i in range(e.state_dim):
        data[f"x{i + 1}"] = e.states[i]
    for j in range(e.input_dim):
        data[f"u{j + 1}"] = np.append(e.inputs[j], np.nan)
    return pd.DataFrame(data).to_csv(index=False, na_rep="", lineterminator="\n")


def episode_from_csv(text: str, episode_id: str, dt: Optional[float] = None) -> Episode:
    """
    Parse CSV text written by :func:`episode_to_csv`.

    :param text: CSV content.
    :param episode_id: Id assigned to the episode.
    :param dt: Sample time; inferred from the ``t`` column when None.
    :return: Episode.
    """
    df = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    columns = list(df.columns)
    if not columns or columns[0] != "t":
        raise InvalidInputError(f"Episode {episode_id}: first column must be 't'")
    x_cols = [c for c in columns if c.startswith("x")]
    u_cols = [c for c in columns if c.startswith("u")]
    if columns != ["t"] + x_cols + u_cols or not x_cols:
        raise InvalidInputError(f"Episode {episode_id}: bad header {columns}")
    if len(df) < 2:
        raise InvalidInputError(f"Episode {episode_id}: needs at least two samples")
    if dt is None:
        dt = float(df["t"].iloc[1] - df["t"].iloc[0])
    states = df[x_cols].to_numpy(dtype=float).T
    inputs = df[u_cols].to_numpy(dtype=float)
    if u_cols and not np.all(np.isnan(inputs[-1])):
        raise InvalidInputError(
            f"Episode {episode_id}: final row must have empty input cells"
        )
    inputs = inputs[:-1].T if u_cols else np.empty((0, len(df) - 1))
    return Episode(id=episode_id, dt=dt, states=states, inputs=inputs)


def save_episode_set(
    directory: Union[str, Path], episodes: List[Episode], roles: Dict[str, str]
) -> List[Path]:
    """
    Write ``episode_<id>.csv`` files and ``meta.json`` into ``directory``.

    :param directory: Output directory (created if missing).
    :param episodes: Episodes sharing dt, m and n.
    :param roles: Episode id -> ``train`` | ``test``.
    :return: Paths of all written files.
    """
    if not episodes:
        raise InvalidInputError("No episodes to save")
    first = episodes[0]
    for e in episodes:
        if (e.dt, e.state_dim, e.input_dim) != (
            first.dt,
            first.state_dim,
            first.input_dim,
        ):
            raise DimensionError(f"Episode {e.id} differs in dt or dimensions")
        if roles.get(e.id) not in ROLES:
            raise InvalidInputError(f"Episode {e.id} has no valid role")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for e in episodes:
        path = out / EPISODE_FILE_TEMPLATE.format(id=e.id)
        atomic_write_text(path, episode_to_csv(e))
        written.append(path)
    meta = {
        "dt": first.dt,
        "m": first.state_dim,
        "n": first.input_dim,
        "episodes": [e.id for e in episodes],
        "roles": {e.id: roles[e.id] for e in episodes},
    }
    meta_path = out / EPISODE_META_FILE
    atomic_write_text(meta_path, json.dumps(meta, indent=2) + "\n")
    written.append(meta_path)
    return written


def load_episode_set(directory: Union[str, Path]) -> EpisodeSet:
    """
    Read an episode directory written by :func:`save_episode_set` or supplied
    externally in the same format.

    :param directory: Directory with ``meta.json`` and episode CSVs.
    :return: Episode set.
    """
    root = Path(directory)
    with open(root / EPISODE_META_FILE) as f:
        meta = json.load(f)
    dt = float(meta["dt"])
    episodes = []
    for episode_id in meta["episodes"]:
        path = root / EPISODE_FILE_TEMPLATE.format(id=episode_id)
        e = episode_from_csv(path.read_text(encoding="utf-8"), str(episode_id), dt)
        if e.state_dim != meta["m"] or e.input_dim != meta["n"]:
            raise DimensionError(
                f"Episode {episode_id} has dimensions ({e.state_dim}, "
                f"{e.input_dim}), meta.json declares ({meta['m']}, {meta['n']})"
            )
        episodes.append(e)
    roles = {str(k): v for k, v in meta.get("roles", {}).items()}
    return EpisodeSet(dt=dt, episodes=episodes, roles=roles)


def episode_paths(directory: Union[str, Path]) -> List[Path]:
    """All files that make up an episode set, for provenance hashing."""
    root = Path(directory)
    with open(root / EPISODE_META_FILE) as f:
        meta = json.load(f)
    paths = [root / EPISODE_FILE_TEMPLATE.format(id=i) for i in meta["episodes"]]
    return paths + [root / EPISODE_META_FILE]
