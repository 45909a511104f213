# Lifting functions: graded monomials and thin-plate RBFs with LHS centers
import logging
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import qmc

from .constants import (
    FEATURE_ORDERING,
    MONOMIAL_DEGREE,
    RBF_ALPHA,
    RBF_COUNT,
    RBF_DELTA,
)
from .errors import DimensionError, InvalidInputError, UnsupportedRecoveryError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


def monomial_exponents(m: int, degree: int) -> List[Tuple[int, ...]]:
    """
    Index tuples of all monomials of total degree 1..degree in graded
    lexicographic order: ``(0,), (1,), ..., (0, 0), (0, 1), ...``.

    :param m: Number of state variables.
    :param degree: Highest total degree (1 or 2).
    :return: List of variable-index tuples, one per monomial.
    """
    terms: List[Tuple[int, ...]] = []
    for d in range(1, degree + 1):
        terms.extend(combinations_with_replacement(range(m), d))
    return terms


def poly_feature_count(m: int, degree: int = MONOMIAL_DEGREE) -> int:
    return len(monomial_exponents(m, degree))


def _poly_columns(X: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of the columns of ``X`` (m x N), one row per monomial."""
    m = X.shape[0]
    rows = [np.prod(X[list(term), :], axis=0) for term in monomial_exponents(m, degree)]
    return np.vstack(rows) if rows else np.empty((0, X.shape[1]))


def poly_features(x, degree: int = MONOMIAL_DEGREE) -> np.ndarray:
    """
    Degree-1 and degree-2 monomials of ``x`` in graded lexicographic order.

    :param x: State vector of length m.
    :param degree: Highest total degree.
    :return: Feature vector.
    """
    vec = np.asarray(x, dtype=float)
    if vec.ndim != 1:
        raise DimensionError(f"State must be a vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("State contains non-finite entries")
    return _poly_columns(vec[:, None], degree)[:, 0]


def sample_centers(
    train_poly_features: np.ndarray, rbf_count: int, seed: int
) -> np.ndarray:
    """
    Latin-hypercube sample RBF centers over the bounding box of the training
    polynomial features.

    :param train_poly_features: Training features, one row per sample.
    :param rbf_count: Number of centers (>= 1).
    :param seed: Sampler seed.
    :return: Array of shape (rbf_count, d), one center per row.
    """
    if rbf_count < 1:
        raise InvalidInputError(f"rbf_count must be >= 1, got {rbf_count}")
    feats = np.asarray(train_poly_features, dtype=float)
    if feats.ndim != 2 or feats.shape[0] == 0 or feats.shape[1] == 0:
        raise InvalidInputError("Training feature matrix is empty")
    if not np.all(np.isfinite(feats)):
        raise InvalidInputError("Training features contain non-finite entries")
    lower = feats.min(axis=0)
    upper = feats.max(axis=0)
    sampler = qmc.LatinHypercube(d=feats.shape[1], rng=np.random.default_rng(seed))
    unit = sampler.random(n=rbf_count)
    # Scaled by hand: degenerate axes (lower == upper) are valid here
    return lower + unit * (upper - lower)


@dataclass(frozen=True, eq=False)
class LiftingSpec:
    """
    Declarative state/input lifting.

    The lifted state is ``[x; degree>=2 monomials; rbf_1..rbf_r]`` when
    ``include_raw_states`` is set, otherwise the degree-1 block is dropped.
    RBF entries are ``r^2 ln r`` with ``r = alpha * ||poly(x) - c_i|| + delta``,
    distances taken in polynomial-feature space. Inputs are lifted by identity.
    ``seed`` records how the centers were sampled and is required once RBFs
    are present.
    """

    state_dim: int
    input_dim: int
    monomial_degree: int = MONOMIAL_DEGREE
    rbf_count: int = 0
    rbf_centers: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    alpha: float = RBF_ALPHA
    delta: float = RBF_DELTA
    include_raw_states: bool = True
    seed: Optional[int] = None
    ordering: str = FEATURE_ORDERING

    def __post_init__(self):
        if self.state_dim < 1:
            raise InvalidInputError(f"state_dim must be >= 1, got {self.state_dim}")
        if self.input_dim < 0:
            raise InvalidInputError(f"input_dim must be >= 0, got {self.input_dim}")
        if self.monomial_degree not in (1, 2):
            raise InvalidInputError(
                f"monomial_degree must be 1 or 2, got {self.monomial_degree}"
            )
        if self.alpha <= 0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if self.delta <= 0:
            raise InvalidInputError(f"delta must be positive, got {self.delta}")
        if self.ordering != FEATURE_ORDERING:
            raise InvalidInputError(f"Unknown feature ordering {self.ordering!r}")
        centers = np.array(self.rbf_centers, dtype=float, ndmin=2)
        if self.rbf_count == 0:
            centers = np.empty((0, self.poly_dim))
        if centers.shape != (self.rbf_count, self.poly_dim):
            raise DimensionError(
                f"Expected {self.rbf_count} centers of length {self.poly_dim}, "
                f"got array of shape {centers.shape}"
            )
        if self.rbf_count > 0 and self.seed is None:
            raise InvalidInputError("A lifting with RBFs must record its center seed")
        centers.setflags(write=False)
        object.__setattr__(self, "rbf_centers", centers)
        if self.lifted_state_dim < 1:
            raise InvalidInputError("Lifting produces no state features")

    @classmethod
    def identity(cls, state_dim: int, input_dim: int) -> "LiftingSpec":
        """Identity lifting ``theta(x) = x``, ``upsilon(u) = u``."""
        return cls(state_dim=state_dim, input_dim=input_dim, monomial_degree=1)

    @property
    def poly_dim(self) -> int:
        return poly_feature_count(self.state_dim, self.monomial_degree)

    @property
    def lifted_state_dim(self) -> int:
        m = self.state_dim
        raw = m if self.include_raw_states else 0
        return raw + (self.poly_dim - m) + self.rbf_count

    @property
    def lifted_input_dim(self) -> int:
        return self.input_dim

    @property
    def lifted_dim(self) -> int:
        return self.lifted_state_dim + self.lifted_input_dim

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "monomial_degree": self.monomial_degree,
            "rbf_count": self.rbf_count,
            "rbf_centers": self.rbf_centers.tolist(),
            "alpha": self.alpha,
            "delta": self.delta,
            "include_raw_states": self.include_raw_states,
            "seed": self.seed,
            "ordering": self.ordering,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LiftingSpec":
        rbf_count = int(data["rbf_count"])
        centers = np.array(data["rbf_centers"], dtype=float)
        if rbf_count == 0:
            centers = np.empty((0, 0))
        return cls(
            state_dim=int(data["state_dim"]),
            input_dim=int(data["input_dim"]),
            monomial_degree=int(data["monomial_degree"]),
            rbf_count=rbf_count,
            rbf_centers=centers,
            alpha=float(data["alpha"]),
            delta=float(data["delta"]),
            include_raw_states=bool(data["include_raw_states"]),
            seed=data.get("seed"),
            ordering=data.get("ordering", FEATURE_ORDERING),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LiftingSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(repr(self.to_dict()))


@dataclass(frozen=True)
class LiftedState:
    values: np.ndarray


def fit_lifting_spec(
    train_states: List[np.ndarray],
    input_dim: int,
    *,
    seed: int,
    rbf_count: int = RBF_COUNT,
    alpha: float = RBF_ALPHA,
    delta: float = RBF_DELTA,
    monomial_degree: int = MONOMIAL_DEGREE,
    include_raw_states: bool = True,
) -> LiftingSpec:
    """
    Build a lifting spec whose RBF centers are Latin-hypercube sampled over the
    polynomial features of the training states.

    :param train_states: State matrices (m x N), one per episode.
    :param input_dim: Input dimension n.
    :param seed: Center sampling seed, stored in the spec.
    :param rbf_count: Number of RBFs (0 disables them).
    :return: Lifting spec.
    """
    if not train_states:
        raise InvalidInputError("No training states to fit the lifting on")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidInputError(f"Lifting seed must be an integer, got {seed!r}")
    X = np.hstack([np.asarray(s, dtype=float) for s in train_states])
    m = X.shape[0]
    centers = np.empty((0, poly_feature_count(m, monomial_degree)))
    if rbf_count > 0:
        feats = _poly_columns(X, monomial_degree).T
        centers = sample_centers(feats, rbf_count, seed)
    spec = LiftingSpec(
        state_dim=m,
        input_dim=input_dim,
        monomial_degree=monomial_degree,
        rbf_count=rbf_count,
        rbf_centers=centers,
        alpha=alpha,
        delta=delta,
        include_raw_states=include_raw_states,
        seed=int(seed),
    )
    log.info(
        f"Lifting fitted: m={m}, n={input_dim}, p_theta={spec.lifted_state_dim}, "
        f"{rbf_count} RBFs (seed {seed})"
    )
    return spec


def lift_states(spec: LiftingSpec, X) -> np.ndarray:
    """
    Lift the columns of ``X`` (m x N) to a (p_theta x N) matrix.

    :param spec: Lifting spec.
    :param X: States, one per column.
    :return: Lifted states, one per column.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != spec.state_dim:
        raise DimensionError(
            f"Expected states with {spec.state_dim} rows, got shape {X.shape}"
        )
    poly = _poly_columns(X, spec.monomial_degree)
    m = spec.state_dim
    blocks = []
    if spec.include_raw_states:
        blocks.append(X.copy())
    blocks.append(poly[m:, :])
    if spec.rbf_count > 0:
        dist = np.linalg.norm(
            poly[None, :, :] - spec.rbf_centers[:, :, None], axis=1
        )
        r = spec.alpha * dist + spec.delta
        blocks.append(r**2 * np.log(r))
    return np.vstack(blocks)


def lift_inputs(spec: LiftingSpec, U) -> np.ndarray:
    """Identity input lifting of the columns of ``U`` (n x N)."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != spec.input_dim:
        raise DimensionError(
            f"Expected inputs with {spec.input_dim} rows, got shape {U.shape}"
        )
    return U.copy()


def lift_state(spec: LiftingSpec, x) -> LiftedState:
    """
    Lift a single state vector.

    :param spec: Lifting spec.
    :param x: State of length m.
    :return: Lifted state of length p_theta.
    """
    vec = np.asarray(x, dtype=float)
    if vec.shape != (spec.state_dim,):
        raise DimensionError(
            f"Expected state of length {spec.state_dim}, got shape {vec.shape}"
        )
    if not np.all(np.isfinite(vec)):
        raise InvalidInputError("State contains non-finite entries")
    return LiftedState(values=lift_states(spec, vec[:, None])[:, 0])


def lift_input(spec: LiftingSpec, u) -> np.ndarray:
    """Identity lifting of a single input vector."""
    vec = np.asarray(u, dtype=float)
    if vec.shape != (spec.input_dim,):
        raise DimensionError(
            f"Expected input of length {spec.input_dim}, got shape {vec.shape}"
        )
    return vec.copy()


def recover_state(spec: LiftingSpec, lifted: LiftedState) -> np.ndarray:
    """
    Read the raw state back from the leading block of a lifted state
    (output matrix ``C = [1 0]``).

    :param spec: Lifting spec with ``include_raw_states`` set.
    :param lifted: Lifted state.
    :return: State vector of length m.
    """
    if not spec.include_raw_states:
        raise UnsupportedRecoveryError(
            "Lifting does not include raw states; state cannot be recovered"
        )
    values = np.asarray(lifted.values)
    if values.shape != (spec.lifted_state_dim,):
        raise DimensionError(
            f"Expected lifted state of length {spec.lifted_state_dim}, "
            f"got shape {values.shape}"
        )
    return values[: spec.state_dim].copy()
