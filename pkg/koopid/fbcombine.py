# Bias-reduced combination of forward and backward Koopman models
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import linalg

from .constants import (
    BACKWARD,
    COND_CAP,
    FORWARD,
    METHOD_EDMD,
    METHOD_EDMD_AS,
    METHOD_FBEDMD,
    METHOD_FBEDMD_AS,
    PINV_REL_TOL,
    SQRTM_IMAG_TOL,
)
from .edmd import KoopmanModel
from .errors import ConditioningError, DimensionError, InvalidInputError
from .lifting import LiftingSpec
from .matlib import as_matrix, condition_number, pinv, spectral_radius, sqrtm_report

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

_FB_METHOD = {METHOD_EDMD: METHOD_FBEDMD, METHOD_EDMD_AS: METHOD_FBEDMD_AS}


@dataclass(frozen=True)
class CombineReport:
    """
    Diagnostics of a forward/backward combination.

    :param sqrt_residual: ``||A~^2 - A_ff A_bb^{-1}||_F`` relative to the product.
    :param discarded_imag: Imaginary magnitude dropped from the square root.
    :param spectral_radius: Spectral radius of ``A~``.
    :param cond_A_bb: 2-norm condition number of ``A_bb``.
    :param rank_deficient: ``1 + A~`` was rank deficient when forming ``B~``.
    """

    sqrt_residual: float
    discarded_imag: float
    spectral_radius: float
    cond_A_bb: float
    rank_deficient: bool = False

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "CombineReport":
        return cls(**data)


def _checked_inverse_product(
    A_bb: np.ndarray, rhs: np.ndarray, cond_cap: float, side: str
) -> Tuple[np.ndarray, float]:
    """``rhs A_bb^{-1}`` (side='right') or ``A_bb^{-1} rhs`` (side='left')."""
    cond = condition_number(A_bb)
    if not cond <= cond_cap:
        raise ConditioningError("A_bb", cond, cond_cap)
    if side == "right":
        return linalg.solve(A_bb.T, rhs.T).T, cond
    return linalg.solve(A_bb, rhs), cond


def combine_A(
    A_ff,
    A_bb,
    cond_cap: float = COND_CAP,
    imag_tol: float = SQRTM_IMAG_TOL,
) -> Tuple[np.ndarray, CombineReport]:
    """
    Bias-reduced dynamics matrix ``A~ = sqrtm(A_ff A_bb^{-1})``.

    :param A_ff: Forward dynamics matrix.
    :param A_bb: Backward dynamics matrix.
    :param cond_cap: Largest accepted condition number of ``A_bb``.
    :param imag_tol: Relative tolerance for imaginary residue in the root.
    :return: ``A~`` and its report.
    """
    A_ff = as_matrix(A_ff, "A_ff")
    A_bb = as_matrix(A_bb, "A_bb")
    if A_ff.shape != A_bb.shape or A_ff.shape[0] != A_ff.shape[1]:
        raise DimensionError(
            f"A_ff {A_ff.shape} and A_bb {A_bb.shape} must be equal square shapes"
        )
    product, cond = _checked_inverse_product(A_bb, A_ff, cond_cap, "right")
    root, discarded = sqrtm_report(product, imag_tol)
    scale = max(float(np.linalg.norm(product)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(root @ root - product)) / scale
    report = CombineReport(
        sqrt_residual=residual,
        discarded_imag=discarded,
        spectral_radius=spectral_radius(root),
        cond_A_bb=cond,
    )
    log.debug(
        f"Combined A: rho={report.spectral_radius:.6f}, cond(A_bb)={cond:.3e}, "
        f"sqrt residual {residual:.3e}"
    )
    return root, report


def combine_B(
    A_tilde,
    A_ff,
    B_ff,
    A_bb,
    B_bb,
    cond_cap: float = COND_CAP,
) -> Tuple[np.ndarray, bool]:
    """
    Bias-reduced input matrix ``B~ = (1 + A~)^+ (B_ff + A_ff B_fb)`` with
    ``B_fb = -A_bb^{-1} B_bb``.

    :return: ``B~`` and whether ``1 + A~`` was rank deficient.
    """
    A_tilde = as_matrix(A_tilde, "A_tilde")
    A_ff = as_matrix(A_ff, "A_ff")
    A_bb = as_matrix(A_bb, "A_bb")
    B_ff = np.asarray(B_ff, dtype=float)
    B_bb = np.asarray(B_bb, dtype=float)
    p_theta = A_tilde.shape[0]
    if B_ff.shape != B_bb.shape or B_ff.ndim != 2 or B_ff.shape[0] != p_theta:
        raise DimensionError(
            f"B_ff {B_ff.shape} and B_bb {B_bb.shape} do not match p_theta={p_theta}"
        )
    if B_ff.shape[1] == 0:
        return np.zeros((p_theta, 0)), False
    B_fb, _ = _checked_inverse_product(A_bb, -B_bb, cond_cap, "left")
    shifted = np.eye(p_theta) + A_tilde
    rank = np.linalg.matrix_rank(shifted, tol=PINV_REL_TOL * np.linalg.norm(shifted, 2))
    rank_deficient = rank < p_theta
    if rank_deficient:
        log.warning(
            f"1 + A~ has rank {rank} < {p_theta}; B~ is the least-norm solution"
        )
    return pinv(shifted) @ (B_ff + A_ff @ B_fb), rank_deficient


def build_fb_model(
    forward: KoopmanModel,
    backward: KoopmanModel,
    spec: LiftingSpec,
    cond_cap: float = COND_CAP,
    imag_tol: float = SQRTM_IMAG_TOL,
) -> Tuple[KoopmanModel, CombineReport]:
    """
    Assemble ``U~ = [A~ B~]`` from a forward and a backward model.

    The result is tagged ``fbedmd`` for unconstrained inputs and
    ``fbedmd-as`` for inputs from the combined stability problem.

    :param forward: Forward model.
    :param backward: Backward model.
    :param spec: Lifting shared by both models.
    :return: Combined model and report.
    """
    if forward.direction != FORWARD or backward.direction != BACKWARD:
        raise InvalidInputError("build_fb_model needs a forward and a backward model")
    if forward.A.shape != backward.A.shape or forward.B.shape != backward.B.shape:
        raise DimensionError(
            f"Forward ({forward.A.shape}, {forward.B.shape}) and backward "
            f"({backward.A.shape}, {backward.B.shape}) models differ in shape"
        )
    if forward.spec != spec or backward.spec != spec:
        raise InvalidInputError("Forward and backward models use different liftings")
    if forward.method != backward.method or forward.method not in _FB_METHOD:
        raise InvalidInputError(
            f"Cannot combine {forward.method} and {backward.method} models"
        )
    A_tilde, report = combine_A(forward.A, backward.A, cond_cap, imag_tol)
    B_tilde, rank_deficient = combine_B(
        A_tilde, forward.A, forward.B, backward.A, backward.B, cond_cap
    )
    if rank_deficient:
        report = CombineReport(**{**report.to_dict(), "rank_deficient": True})
    model = KoopmanModel(
        A=A_tilde,
        B=B_tilde,
        spec=spec,
        method=_FB_METHOD[forward.method],
        direction=FORWARD,
    )
    log.info(
        f"{model.method} model assembled, spectral radius "
        f"{report.spectral_radius:.6f}"
    )
    return model, report
