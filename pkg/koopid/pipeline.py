# Method dispatch: episodes + lifting -> identified Koopman model
import logging
from dataclasses import dataclass
from typing import List, Optional

from .constants import (
    METHOD_EDMD,
    METHOD_EDMD_AS,
    METHOD_FBEDMD,
    METHOD_FBEDMD_AS,
    METHODS,
)
from .dataset import Episode
from .edmd import KoopmanModel, edmd_backward, edmd_forward
from .errors import InvalidInputError
from .fbcombine import CombineReport, build_fb_model
from .lifting import LiftingSpec
from .snapshots import build_snapshots, gram_backward, gram_forward
from .stability import (
    StabilityConfig,
    StabilitySolution,
    models_from_solution,
    solve_combined,
    solve_forward_as,
)

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True, eq=False)
class IdentificationResult:
    model: KoopmanModel
    q: int
    solution: Optional[StabilitySolution] = None
    report: Optional[CombineReport] = None


def identify(
    episodes: List[Episode],
    spec: LiftingSpec,
    method: str,
    cfg: Optional[StabilityConfig] = None,
) -> IdentificationResult:
    """
    Identify a Koopman model with one of the four methods.

    ``edmd`` and ``fbedmd`` are closed form; ``edmd-as`` and ``fbedmd-as``
    solve the LMI problems configured by ``cfg``.

    :param episodes: Training episodes.
    :param spec: Lifting spec.
    :param method: One of ``edmd``, ``edmd-as``, ``fbedmd``, ``fbedmd-as``.
    :param cfg: Stability settings, defaults when omitted.
    :return: Model with the solver solution and combination report if any.
    """
    if method not in METHODS:
        raise InvalidInputError(f"Unknown method {method!r}; expected one of {METHODS}")
    cfg = cfg or StabilityConfig()
    snaps = build_snapshots(episodes, spec)
    gf = gram_forward(snaps)
    p_dims = (snaps.p_theta, snaps.p_upsilon)
    log.info(
        f"Identifying {method}: p_theta={p_dims[0]}, p_upsilon={p_dims[1]}, q={snaps.q}"
    )

    if method == METHOD_EDMD:
        return IdentificationResult(model=edmd_forward(gf, spec), q=snaps.q)
    if method == METHOD_EDMD_AS:
        solution = solve_forward_as(gf, p_dims, cfg)
        forward, _ = models_from_solution(solution, spec)
        return IdentificationResult(model=forward, q=snaps.q, solution=solution)

    gb = gram_backward(snaps)
    if method == METHOD_FBEDMD:
        model, report = build_fb_model(
            edmd_forward(gf, spec), edmd_backward(gb, spec), spec
        )
        return IdentificationResult(model=model, q=snaps.q, report=report)

    assert method == METHOD_FBEDMD_AS
    solution = solve_combined(gf, gb, p_dims, cfg)
    forward, backward = models_from_solution(solution, spec)
    model, report = build_fb_model(forward, backward, spec)
    if report.spectral_radius > cfg.rho_bar + 1e-6:
        log.warning(
            f"Combined spectral radius {report.spectral_radius:.8f} exceeds "
            f"rho_bar {cfg.rho_bar}"
        )
    return IdentificationResult(
        model=model, q=snaps.q, solution=solution, report=report
    )


def identify_backward(episodes: List[Episode], spec: LiftingSpec) -> KoopmanModel:
    """Unconstrained backward EDMD model."""
    snaps = build_snapshots(episodes, spec)
    return edmd_backward(gram_backward(snaps), spec)
