# Unconstrained forward and backward EDMD and the Koopman model container
import logging
from dataclasses import dataclass

import numpy as np

from .constants import BACKWARD, DIRECTIONS, FORWARD, METHOD_EDMD, METHODS
from .errors import DimensionError, InvalidInputError, NumericError
from .lifting import LiftingSpec
from .matlib import pinv
from .snapshots import GramPair

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True, eq=False)
class KoopmanModel:
    """
    Lifted linear model ``theta(x_{k+1}) = A theta(x_k) + B upsilon(u_k)``.

    ``method`` is one of ``edmd``, ``edmd-as``, ``fbedmd``, ``fbedmd-as``;
    ``direction`` tells whether A propagates forward or backward in time.
    """

    A: np.ndarray
    B: np.ndarray
    spec: LiftingSpec
    method: str = METHOD_EDMD
    direction: str = FORWARD

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        p_theta = self.spec.lifted_state_dim
        p_upsilon = self.spec.lifted_input_dim
        if B.size == 0:
            B = np.zeros((p_theta, p_upsilon))
        if A.shape != (p_theta, p_theta) or B.shape != (p_theta, p_upsilon):
            raise DimensionError(
                f"A {A.shape} and B {B.shape} do not match lifting dimensions "
                f"p_theta={p_theta}, p_upsilon={p_upsilon}"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise NumericError("Koopman matrices contain non-finite entries")
        if self.method not in METHODS:
            raise InvalidInputError(f"Unknown method tag {self.method!r}")
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(f"Unknown direction tag {self.direction!r}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def U(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @property
    def p_theta(self) -> int:
        return self.A.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.B.shape[1]


def _regress(g: GramPair, spec: LiftingSpec, direction: str) -> KoopmanModel:
    if g.direction != direction:
        raise InvalidInputError(
            f"Expected {direction} Gram matrices, got {g.direction}"
        )
    if g.p_theta != spec.lifted_state_dim or g.p != spec.lifted_dim:
        raise DimensionError(
            f"Gram matrices ({g.p_theta} x {g.p}) do not match lifting "
            f"({spec.lifted_state_dim} x {spec.lifted_dim})"
        )
    U = g.G @ pinv(g.H)
    if not np.all(np.isfinite(U)):
        raise NumericError(f"{direction} EDMD produced non-finite entries")
    p_theta = g.p_theta
    log.debug(f"{direction} EDMD solved, ||U||_F = {np.linalg.norm(U):.4e}")
    return KoopmanModel(
        A=U[:, :p_theta],
        B=U[:, p_theta:],
        spec=spec,
        method=METHOD_EDMD,
        direction=direction,
    )


def edmd_forward(g: GramPair, spec: LiftingSpec) -> KoopmanModel:
    """
    Forward EDMD ``U_f = G_f H_f^+``, split into ``[A_ff B_ff]``.

    :param g: Forward Gram pair.
    :param spec: Lifting the Grams were built with.
    :return: Forward model.
    """
    return _regress(g, spec, FORWARD)


def edmd_backward(g: GramPair, spec: LiftingSpec) -> KoopmanModel:
    """
    Backward EDMD ``U_b = G_b H_b^+``, split into ``[A_bb B_bb]``.

    :param g: Backward Gram pair.
    :param spec: Lifting the Grams were built with.
    :return: Backward model.
    """
    return _regress(g, spec, BACKWARD)
