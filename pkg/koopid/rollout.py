# Multi-step prediction with re-lifting, error metrics, eigenvalue tables, SNR sweeps
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .dataset import Episode, noise_std_for_snr, noisy_copies
from .edmd import KoopmanModel
from .errors import (
    DimensionError,
    InvalidInputError,
    KoopidError,
    UndefinedReferenceError,
    UnsupportedRecoveryError,
)
from .lifting import LiftedState, LiftingSpec, lift_input, lift_state, recover_state
from .matlib import eigenvalues, spectral_radius
from .pipeline import identify
from .stability import StabilityConfig
from .utils import thread_cap

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

SWEEP_COLUMNS = [
    "method",
    "snr_db",
    "seed",
    "err_full",
    "err_A",
    "err_B",
    "spectral_radius",
    "status",
]


@dataclass(frozen=True, eq=False)
class PredictionResult:
    """
    Predicted raw states, m x (k+1), starting at the reference initial state.
    ``diverged_at`` is the first step whose prediction was non-finite; the
    trajectory is truncated before it.
    """

    episode_id: str
    states: np.ndarray
    diverged_at: Optional[int] = None
    errors: Optional[np.ndarray] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def status(self) -> str:
        return "ok" if self.diverged_at is None else f"diverged@{self.diverged_at}"


@dataclass(frozen=True)
class ErrorSummary:
    """
    Multi-step prediction errors. ``rms`` and ``mean`` pool every state
    component of every compared sample; ``count`` is the number of pooled
    components.
    """

    episode_id: str
    rms: float
    mean: float
    count: int
    diverged: bool = False
    model_error: Optional[float] = None
    episodes: Tuple["ErrorSummary", ...] = ()


class ModelError(NamedTuple):
    full: float
    A: float
    B: float


def rollout(
    model: KoopmanModel,
    x0,
    inputs,
    episode_id: str = "",
    relift: bool = True,
) -> PredictionResult:
    """
    Propagate ``theta' = A theta(x_k) + B upsilon(u_k)`` and read ``x_{k+1}``
    from the leading block of ``theta'``.

    With ``relift`` (the default) the recovered state is lifted from scratch
    every step; otherwise the lifted vector is propagated directly.

    :param model: Koopman model whose lifting includes raw states.
    :param x0: Initial state of length m.
    :param inputs: Inputs, n x T.
    :param episode_id: Id carried into the result.
    :param relift: Re-lift the recovered state each step.
    :return: Prediction, truncated at the first non-finite step.
    """
    spec = model.spec
    if not spec.include_raw_states:
        raise UnsupportedRecoveryError("Rollout needs a lifting with raw states")
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1 and spec.input_dim == 0:
        U = U.reshape(0, -1)
    if U.ndim != 2 or U.shape[0] != spec.input_dim:
        raise DimensionError(
            f"Expected inputs with {spec.input_dim} rows, got shape {U.shape}"
        )
    x = np.asarray(x0, dtype=float).copy()
    theta = lift_state(spec, x).values
    states = [x]
    diverged_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(U.shape[1]):
            if relift and k > 0:
                theta = lift_state(spec, x).values
            theta = model.A @ theta + model.B @ lift_input(spec, U[:, k])
            if not np.all(np.isfinite(theta)):
                diverged_at = k + 1
                break
            x = recover_state(spec, LiftedState(values=theta))
            states.append(x)
    if diverged_at is not None:
        log.warning(
            f"Prediction for episode {episode_id!r} diverged at step {diverged_at}"
        )
    return PredictionResult(
        episode_id=episode_id,
        states=np.column_stack(states),
        diverged_at=diverged_at,
    )


def predict_episode(
    model: KoopmanModel, reference: Episode, relift: bool = True
) -> PredictionResult:
    """Roll out from the episode's initial state and attach per-step errors."""
    pred = rollout(
        model, reference.states[:, 0], reference.inputs, reference.id, relift
    )
    n = pred.states.shape[1]
    errors = np.linalg.norm(pred.states - reference.states[:, :n], axis=0)
    return PredictionResult(
        episode_id=pred.episode_id,
        states=pred.states,
        diverged_at=pred.diverged_at,
        errors=errors,
    )


def prediction_errors(pred: PredictionResult, reference: Episode) -> ErrorSummary:
    """
    RMS and signed mean of the prediction error, pooled over every state
    component of the compared samples. A diverged prediction is compared over
    its pre-divergence prefix.

    :param pred: Prediction.
    :param reference: Reference episode.
    :return: Error summary.
    """
    n = pred.states.shape[1]
    if pred.states.shape[0] != reference.state_dim or n > reference.steps + 1:
        raise DimensionError(
            f"Prediction {pred.states.shape} does not fit reference "
            f"{reference.states.shape}"
        )
    diff = pred.states - reference.states[:, :n]
    return ErrorSummary(
        episode_id=reference.id,
        rms=float(np.sqrt(np.mean(diff**2))),
        mean=float(np.mean(diff)),
        count=int(diff.size),
        diverged=pred.diverged,
    )


def pool_summaries(
    summaries: Sequence[ErrorSummary],
    episode_id: str = "all",
    model_error: Optional[float] = None,
) -> ErrorSummary:
    """
    Pool per-episode summaries, weighting each by its component count.

    :param summaries: Per-episode summaries.
    :param episode_id: Label of the pooled row.
    :param model_error: Relative model error to attach.
    :return: Pooled summary keeping the per-episode breakdown.
    """
    if not summaries:
        raise InvalidInputError("No summaries to pool")
    counts = np.array([s.count for s in summaries], dtype=float)
    total = counts.sum()
    rms_values = np.array([s.rms for s in summaries])
    rms = math.sqrt(float(np.sum(counts * rms_values**2)) / total)
    mean = float(np.sum(counts * np.array([s.mean for s in summaries]))) / total
    return ErrorSummary(
        episode_id=episode_id,
        rms=rms,
        mean=mean,
        count=int(total),
        diverged=any(s.diverged for s in summaries),
        model_error=model_error,
        episodes=tuple(summaries),
    )


def summaries_frame(summary: ErrorSummary) -> pd.DataFrame:
    """One row per episode plus the pooled row."""
    rows = [
        {
            "episode": s.episode_id,
            "rms": s.rms,
            "mean": s.mean,
            "samples": s.count,
            "diverged": s.diverged,
            "model_error": s.model_error,
        }
        for s in summary.episodes + (summary,)
    ]
    columns = ["episode", "rms", "mean", "samples", "diverged", "model_error"]
    return pd.DataFrame(rows, columns=columns)


def _relative(diff: np.ndarray, ref: np.ndarray) -> float:
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0:
        return math.nan
    return float(np.linalg.norm(diff)) / ref_norm


def relative_model_error(U: KoopmanModel, U_ref: KoopmanModel) -> ModelError:
    """
    Relative Frobenius distances ``||U - U_ref||_F / ||U_ref||_F`` for
    ``[A B]``, A alone and B alone. A block whose reference is zero reports
    ``nan``.

    :param U: Model under test.
    :param U_ref: Reference model.
    :return: (full, A-only, B-only).
    """
    if U.A.shape != U_ref.A.shape or U.B.shape != U_ref.B.shape:
        raise DimensionError(
            f"Models differ in shape: ({U.A.shape}, {U.B.shape}) vs "
            f"({U_ref.A.shape}, {U_ref.B.shape})"
        )
    if np.linalg.norm(U_ref.U) == 0.0:
        raise UndefinedReferenceError("Reference Koopman matrix has zero norm")
    return ModelError(
        full=_relative(U.U - U_ref.U, U_ref.U),
        A=_relative(U.A - U_ref.A, U_ref.A),
        B=_relative(U.B - U_ref.B, U_ref.B),
    )


def eigenvalue_table(model: KoopmanModel) -> pd.DataFrame:
    """Eigenvalues of A as (index, real, imag, modulus) rows, largest modulus first."""
    lam = eigenvalues(model.A)
    order = np.argsort(-np.abs(lam), kind="stable")
    lam = lam[order]
    return pd.DataFrame(
        {
            "index": np.arange(lam.size),
            "real": lam.real,
            "imag": lam.imag,
            "modulus": np.abs(lam),
        }
    )


def prediction_frame(pred: PredictionResult, reference: Episode) -> pd.DataFrame:
    """
    Plot-ready table: time, predicted states, reference states, per-step
    Euclidean error and the prediction status.
    """
    n = pred.states.shape[1]
    ref = reference.states[:, :n]
    data = {"t": np.arange(n) * reference.dt}
    for i in range(pred.states.shape[0]):
        data[f"pred_x{i + 1}"] = pred.states[i]
    for i in range(pred.states.shape[0]):
        data[f"ref_x{i + 1}"] = ref[i]
    data["error"] = np.linalg.norm(pred.states - ref, axis=0)
    data["status"] = pred.status
    return pd.DataFrame(data)


def _sweep_cell(
    clean: List[Episode],
    spec: LiftingSpec,
    method: str,
    snr: float,
    seed: int,
    cfg: StabilityConfig,
    reference: Optional[KoopmanModel],
    reference_status: str,
) -> dict:
    row = {
        "method": method,
        "snr_db": snr,
        "seed": seed,
        "err_full": math.nan,
        "err_A": math.nan,
        "err_B": math.nan,
        "spectral_radius": math.nan,
        "status": reference_status,
    }
    if reference is None:
        return row
    try:
        std = noise_std_for_snr(clean, snr)
        model = identify(noisy_copies(clean, std, seed), spec, method, cfg).model
        err = relative_model_error(model, reference)
        row.update(
            err_full=err.full,
            err_A=err.A,
            err_B=err.B,
            spectral_radius=spectral_radius(model.A),
            status="ok",
        )
    except (KoopidError, np.linalg.LinAlgError) as e:
        log.warning(f"Sweep cell ({method}, {snr} dB, seed {seed}) failed: {e}")
        row["status"] = f"{type(e).__name__}: {e}"
    return row


def snr_sweep(
    clean: List[Episode],
    spec: LiftingSpec,
    methods: Sequence[str],
    snr_grid: Sequence[float],
    seeds: Sequence[int],
    cfg: Optional[StabilityConfig] = None,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """
    Relative model errors of each method over a grid of SNR levels and noise
    seeds, against each method's model on the clean data. The lifting stays
    fixed over every cell. Failed cells keep ``nan`` errors and a status
    message.

    :param clean: Noise-free training episodes.
    :param spec: Lifting used for every identification.
    :param methods: Method tags.
    :param snr_grid: Target SNR levels in dB (``inf`` adds no noise).
    :param seeds: Noise seeds.
    :param cfg: Stability settings.
    :param n_jobs: Parallel workers, ``KOOPID_THREADS`` when None.
    :return: Tidy frame with one row per (method, snr, seed).
    """
    if not snr_grid:
        raise InvalidInputError("SNR grid is empty")
    cfg = cfg or StabilityConfig()
    references = {}
    for method in methods:
        try:
            references[method] = (identify(clean, spec, method, cfg).model, "ok")
        except KoopidError as e:
            log.warning(f"Reference model for {method} failed: {e}")
            references[method] = (None, f"reference failed: {type(e).__name__}: {e}")
    n_jobs = n_jobs or thread_cap()
    log.info(
        f"SNR sweep: {len(methods)} methods x {len(snr_grid)} levels x "
        f"{len(seeds)} seeds on {n_jobs} worker(s)"
    )
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_cell)(
            clean, spec, method, float(snr), int(seed), cfg, *references[method]
        )
        for method in methods
        for snr in snr_grid
        for seed in seeds
    )
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
