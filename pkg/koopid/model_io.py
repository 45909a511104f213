# Save and load Koopman model files (JSON) with provenance and a spot-check rollout
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .constants import MODEL_FORMAT_VERSION
from .edmd import KoopmanModel
from .errors import InvalidInputError
from .fbcombine import CombineReport
from .lifting import LiftingSpec
from .rollout import PredictionResult, rollout
from .stability import StabilitySolution
from .utils import atomic_write_text

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


def spot_check(model: KoopmanModel, x0, inputs) -> Dict[str, Any]:
    """Short rollout stored in the model file for reload verification."""
    U = np.asarray(inputs, dtype=float)
    pred = rollout(model, x0, U, episode_id="spot-check")
    return {
        "x0": np.asarray(x0, dtype=float).tolist(),
        "steps": int(U.shape[1]),
        "inputs": U.tolist(),
        "states": pred.states.tolist(),
        "diverged_at": pred.diverged_at,
    }


def model_to_dict(
    model: KoopmanModel,
    solution: Optional[StabilitySolution] = None,
    report: Optional[CombineReport] = None,
    provenance: Optional[Dict[str, Any]] = None,
    spot: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "method": model.method,
        "direction": model.direction,
        "dims": {
            "m": model.spec.state_dim,
            "n": model.spec.input_dim,
            "p_theta": model.p_theta,
            "p_upsilon": model.p_upsilon,
        },
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "lifting": model.spec.to_dict(),
        "combine_report": report.to_dict() if report is not None else None,
        "stability": solution.summary() if solution is not None else None,
        "provenance": provenance or {},
        "spot_check": spot,
    }


def save_model(
    path: Union[str, Path],
    model: KoopmanModel,
    *,
    solution: Optional[StabilitySolution] = None,
    report: Optional[CombineReport] = None,
    provenance: Optional[Dict[str, Any]] = None,
    spot: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write a model file atomically.

    :param path: Destination JSON file.
    :param model: Identified model.
    :param solution: LMI solution whose margins are recorded.
    :param report: Forward/backward combination report.
    :param provenance: Dataset and config hashes, seeds.
    :param spot: Spot-check rollout from :func:`spot_check`.
    """
    data = model_to_dict(model, solution, report, provenance, spot)
    atomic_write_text(path, json.dumps(data, indent=2) + "\n")
    log.info(f"Model ({model.method}) written to {path}")


def load_model(path: Union[str, Path]) -> Tuple[KoopmanModel, Dict[str, Any]]:
    """
    Read a model file.

    :param path: Model JSON file.
    :return: Model and the full file contents as metadata.
    """
    with open(path) as f:
        data = json.load(f)
    version = data.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise InvalidInputError(
            f"Unsupported model format version {version!r} in {path}; "
            f"expected {MODEL_FORMAT_VERSION}"
        )
    try:
        spec = LiftingSpec.from_dict(data["lifting"])
        dims = data["dims"]
        B = np.array(data["B"], dtype=float).reshape(
            int(dims["p_theta"]), int(dims["p_upsilon"])
        )
        model = KoopmanModel(
            A=np.array(data["A"], dtype=float),
            B=B,
            spec=spec,
            method=data["method"],
            direction=data["direction"],
        )
    except InvalidInputError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed model file {path}: {e}") from e
    return model, data


def verify_spot_check(model: KoopmanModel, metadata: Dict[str, Any]) -> bool:
    """
    Re-run the stored spot-check rollout and compare it bit-for-bit.

    :param model: Loaded model.
    :param metadata: Model file contents.
    :return: True when the predictions are identical.
    """
    spot = metadata.get("spot_check")
    if not spot:
        raise InvalidInputError("Model file carries no spot-check rollout")
    inputs = np.array(spot["inputs"], dtype=float).reshape(
        model.spec.input_dim, int(spot["steps"])
    )
    pred: PredictionResult = rollout(model, spot["x0"], inputs, "spot-check")
    expected = np.array(spot["states"], dtype=float)
    same = (
        pred.states.shape == expected.shape
        and np.array_equal(pred.states, expected)
        and pred.diverged_at == spot.get("diverged_at")
    )
    if not same:
        log.warning("Spot-check rollout differs from the stored prediction")
    return bool(same)
