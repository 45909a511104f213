# Forward/backward lifted snapshot matrices and their Gram factorizations
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .constants import BACKWARD, DIRECTIONS, FORWARD
from .dataset import Episode
from .errors import DimensionError, InvalidInputError
from .lifting import LiftingSpec, lift_inputs, lift_states

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """
    Lifted snapshot matrices.

    ``psi = [Theta; Upsilon]`` holds the current lifted states and inputs,
    ``theta_plus`` the next lifted states, ``psi_hat = [Theta_plus; Upsilon]``
    and ``theta`` the same data paired backward in time.
    """

    psi: np.ndarray
    theta_plus: np.ndarray
    psi_hat: np.ndarray
    theta: np.ndarray
    spec: LiftingSpec

    @property
    def q(self) -> int:
        return self.psi.shape[1]

    @property
    def p_theta(self) -> int:
        return self.theta_plus.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.psi.shape[0] - self.p_theta


@dataclass(frozen=True, eq=False)
class GramPair:
    """
    ``G = (1/q) Theta_out Psi_in^T`` and ``H = (1/q) Psi_in Psi_in^T`` for one
    time direction.
    """

    G: np.ndarray
    H: np.ndarray
    direction: str
    q: int

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(f"Unknown direction {self.direction!r}")
        if self.H.shape != (self.G.shape[1], self.G.shape[1]):
            raise DimensionError(
                f"G {self.G.shape} and H {self.H.shape} are inconsistent"
            )

    @property
    def p_theta(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[1]


def build_snapshots(episodes: List[Episode], spec: LiftingSpec) -> SnapshotSet:
    """
    Lift every episode and pair consecutive samples. Pairs never span an
    episode boundary.

    :param episodes: Episodes with consistent dimensions.
    :param spec: Lifting spec.
    :return: Snapshot set with ``q = sum of per-episode steps``.
    """
    if not episodes:
        raise InvalidInputError("No episodes to build snapshots from")
    psi_blocks, plus_blocks, ups_blocks = [], [], []
    for e in episodes:
        if e.state_dim != spec.state_dim or e.input_dim != spec.input_dim:
            raise DimensionError(
                f"Episode {e.id} has dimensions ({e.state_dim}, {e.input_dim}), "
                f"lifting expects ({spec.state_dim}, {spec.input_dim})"
            )
        if e.steps < 1:
            raise InvalidInputError(f"Episode {e.id} has fewer than two samples")
        lifted = lift_states(spec, e.states)
        ups = lift_inputs(spec, e.inputs)
        psi_blocks.append(lifted[:, :-1])
        plus_blocks.append(lifted[:, 1:])
        ups_blocks.append(ups)
    theta = np.hstack(psi_blocks)
    theta_plus = np.hstack(plus_blocks)
    upsilon = np.hstack(ups_blocks)
    log.debug(
        f"Snapshots: p_theta={theta.shape[0]}, p_upsilon={upsilon.shape[0]}, "
        f"q={theta.shape[1]} from {len(episodes)} episodes"
    )
    return SnapshotSet(
        psi=np.vstack([theta, upsilon]),
        theta_plus=theta_plus,
        psi_hat=np.vstack([theta_plus, upsilon]),
        theta=theta,
        spec=spec,
    )


def _gram(out: np.ndarray, inp: np.ndarray, direction: str) -> GramPair:
    q = inp.shape[1]
    if q < 1:
        raise InvalidInputError("Gram matrices need at least one snapshot")
    G = out @ inp.T / q
    H = inp @ inp.T / q
    return GramPair(G=G, H=0.5 * (H + H.T), direction=direction, q=q)


def gram_forward(s: SnapshotSet) -> GramPair:
    """``G_f = Theta_plus Psi^T / q``, ``H_f = Psi Psi^T / q``."""
    return _gram(s.theta_plus, s.psi, FORWARD)


def gram_backward(s: SnapshotSet) -> GramPair:
    """``G_b = Theta Psi_hat^T / q``, ``H_b = Psi_hat Psi_hat^T / q``."""
    return _gram(s.theta, s.psi_hat, BACKWARD)
