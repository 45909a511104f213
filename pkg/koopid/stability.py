# LMI-constrained identification (EDMD-AS and combined forward/backward) via cvxpy
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Tuple, Union

import cvxpy as cp
import numpy as np
import scipy.sparse
from scipy import linalg

from .constants import (
    BACKWARD,
    DEFAULT_SOLVER,
    FEAS_TOL,
    FORWARD,
    GAP_TOL,
    MARGIN_SCALE,
    MAX_ITERS,
    METHOD_EDMD_AS,
    RHO_BAR,
)
from .edmd import KoopmanModel
from .errors import (
    DimensionError,
    InfeasibleProblemError,
    InvalidInputError,
    SolverError,
)
from .lifting import LiftingSpec
from .matlib import (
    as_matrix,
    is_symmetric,
    pinv,
    spectral_norm,
    sym_eig_max,
    sym_eig_min,
    symmetrize,
)
from .snapshots import GramPair
from .utils import atomic_write_text

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

RECOVERY_RESIDUAL_TOL = 1e-8

# Margins of constraints that scale linearly with P
P_SCALED_MARGINS = frozenset(
    {
        "cost_forward",
        "cost_backward",
        "p_floor",
        "stability_forward",
        "stability_backward",
        "lyapunov_forward",
        "lyapunov_backward",
    }
)


@dataclass(frozen=True)
class StabilityConfig:
    """
    Settings for the LMI problems.

    :param rho_bar: Spectral-radius bound, ``0 < rho_bar <= 1``.
    :param epsilon: Floor on P; ``None`` computes ``||Psi^T (Psi Psi^T)^+||_2``.
    :param margin: Margin ``mu`` realizing strict LMIs as ``>= mu 1``;
        ``None`` uses ``1e-7 max(1, ||H_f||_2)``.
    :param feas_tol: Solver feasibility tolerance.
    :param gap_tol: Solver duality-gap tolerance.
    :param max_iters: Solver iteration cap.
    :param solver: cvxpy solver name.
    :param dump_path: Write the assembled conic program here when set.
    """

    rho_bar: float = RHO_BAR
    epsilon: Optional[float] = None
    margin: Optional[float] = None
    feas_tol: float = FEAS_TOL
    gap_tol: float = GAP_TOL
    max_iters: int = MAX_ITERS
    solver: str = DEFAULT_SOLVER
    dump_path: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.rho_bar <= 1:
            raise InvalidInputError(f"rho_bar must lie in (0, 1], got {self.rho_bar}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        if self.margin is not None and not self.margin > 0:
            raise InvalidInputError(f"margin must be positive, got {self.margin}")
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise InvalidInputError("Solver tolerances must be positive")
        if self.max_iters < 1:
            raise InvalidInputError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True, eq=False)
class StabilitySolution:
    """
    Solver output with recovered dynamics matrices ``A = X P^{-1}`` and
    solver-independent constraint margins (positive means satisfied).

    Margins of constraints that grow with P (cost, floor, stability and
    Lyapunov) are divided by ``max(1, ||P||_2)``, so every margin is compared
    against the same ``-feas_tol`` floor.
    """

    X_f: np.ndarray
    B_ff: np.ndarray
    P: np.ndarray
    gamma: float
    A_ff: np.ndarray
    rho_bar: float
    epsilon: float
    mu: float
    status: str
    solve_time: float
    X_b: Optional[np.ndarray] = None
    B_bb: Optional[np.ndarray] = None
    nu: Optional[float] = None
    A_bb: Optional[np.ndarray] = None
    margins: Dict[str, float] = field(default_factory=dict)

    @property
    def combined(self) -> bool:
        return self.A_bb is not None

    def summary(self) -> Dict[str, Union[float, str, Dict[str, float]]]:
        return {
            "status": self.status,
            "gamma": self.gamma,
            "nu": self.nu,
            "rho_bar": self.rho_bar,
            "epsilon": self.epsilon,
            "mu": self.mu,
            "solve_time": self.solve_time,
            "margins": dict(self.margins),
        }


class BackwardMargins(NamedTuple):
    quadratic: float
    linearized: float


def _check_symmetric(P: np.ndarray) -> np.ndarray:
    P = as_matrix(P, "P")
    if not is_symmetric(P):
        raise InvalidInputError("P must be symmetric")
    return P


def check_forward_lmi(A, P, rho_bar: float) -> float:
    """
    Largest eigenvalue of ``A P A^T - rho_bar^2 P``; negative means the
    forward Lyapunov constraint holds.

    :param A: Forward dynamics matrix.
    :param P: Symmetric Lyapunov matrix.
    :param rho_bar: Spectral-radius bound.
    :return: Margin.
    """
    P = _check_symmetric(P)
    A = as_matrix(A, "A")
    return sym_eig_max(A @ P @ A.T - rho_bar**2 * P)


def check_backward_lmi(A_bb, P, rho_bar: float) -> BackwardMargins:
    """
    Smallest eigenvalues of the backward constraint
    ``A_bb P A_bb^T - P / rho_bar^2`` and of its Young's-inequality
    linearization ``rho_bar (A_bb P + P A_bb^T) - 2 P``. Both positive means
    the constraint holds; a positive linearized margin implies a positive
    quadratic one.

    :param A_bb: Backward dynamics matrix.
    :param P: Symmetric Lyapunov matrix.
    :param rho_bar: Spectral-radius bound.
    :return: (quadratic, linearized) margins.
    """
    P = _check_symmetric(P)
    A = as_matrix(A_bb, "A_bb")
    quadratic = sym_eig_min(A @ P @ A.T - P / rho_bar**2)
    AP = A @ P
    linearized = sym_eig_min(rho_bar * (AP + AP.T) - 2.0 * P)
    return BackwardMargins(quadratic=quadratic, linearized=linearized)


def auto_epsilon(g: GramPair) -> float:
    """
    ``||Psi^T (Psi Psi^T)^+||_2`` from Gram data, using
    ``||Psi^+||_2^2 = ||H^+||_2 / q``.
    """
    return math.sqrt(spectral_norm(pinv(g.H)) / g.q)


def _sym(expr):
    return (expr + expr.T) / 2


def _cost_lmi(K, P, X, Bv, Z, slack, p_theta, p_upsilon, mu):
    """
    ``[[Z, E^T], [E, slack 1]] >= mu 1`` with ``E = K Pbar - [X B]`` and
    ``Pbar = blkdiag(P, 1)``.
    """
    if p_upsilon:
        E = cp.hstack([K[:, :p_theta] @ P - X, K[:, p_theta:] - Bv])
    else:
        E = K @ P - X
    block = cp.bmat([[Z, E.T], [E, slack * np.eye(p_theta)]])
    return _sym(block) >> mu * np.eye(p_theta + p_theta + p_upsilon)


def _slack_constraints(Z, p, mu):
    return [Z >> mu * np.eye(p), cp.trace(Z) <= 1 - mu]


def _forward_stability(P, X, rho_bar, p_theta, mu):
    block = cp.bmat([[rho_bar * P, X], [X.T, rho_bar * P]])
    return _sym(block) >> mu * np.eye(2 * p_theta)


def _backward_stability(P, X_b, rho_bar, p_theta, mu):
    return rho_bar * (X_b + X_b.T) - 2 * P >> mu * np.eye(p_theta)


def _p_floor(P, epsilon, p_theta, mu):
    return P - epsilon * np.eye(p_theta) >> mu * np.eye(p_theta)


def _solver_options(cfg: StabilityConfig) -> Dict[str, float]:
    if cfg.solver == "CLARABEL":
        return {
            "tol_feas": cfg.feas_tol,
            "tol_gap_abs": cfg.gap_tol,
            "tol_gap_rel": cfg.gap_tol,
            "max_iter": cfg.max_iters,
        }
    if cfg.solver == "SCS":
        return {
            "eps_abs": cfg.feas_tol,
            "eps_rel": cfg.gap_tol,
            "max_iters": cfg.max_iters,
        }
    return {}


def _validate_dims(g: GramPair, p_dims: Tuple[int, int]) -> Tuple[int, int]:
    p_theta, p_upsilon = p_dims
    if g.G.shape != (p_theta, p_theta + p_upsilon):
        raise DimensionError(
            f"{g.direction} Gram G has shape {g.G.shape}, expected "
            f"({p_theta}, {p_theta + p_upsilon})"
        )
    return p_theta, p_upsilon


def _resolve(cfg: StabilityConfig, gf: GramPair) -> Tuple[float, float]:
    epsilon = cfg.epsilon if cfg.epsilon is not None else auto_epsilon(gf)
    if not epsilon > 0:
        raise InvalidInputError(f"Computed epsilon {epsilon} is not positive")
    mu = cfg.margin
    if mu is None:
        mu = MARGIN_SCALE * max(1.0, spectral_norm(gf.H))
    return epsilon, mu


def _solve(problem: cp.Problem, cfg: StabilityConfig, n_lmis: int) -> Tuple[str, float]:
    if cfg.dump_path:
        dump_conic_program(problem, cfg.dump_path, cfg.solver)
    options = _solver_options(cfg)
    log.debug(f"Solving with {cfg.solver}, options {options}")
    start = time.perf_counter()
    try:
        problem.solve(solver=cfg.solver, **options)
    except cp.error.SolverError as e:
        raise SolverError(
            f"Solver {cfg.solver} failed: {e}", status="solver_error"
        ) from e
    elapsed = time.perf_counter() - start
    status = problem.status
    stats = problem.solver_stats
    iters = getattr(stats, "num_iters", None)
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise InfeasibleProblemError(
            status,
            f"{n_lmis} LMI blocks, solver {cfg.solver}, {iters} iterations, "
            f"{elapsed:.2f} s",
        )
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverError(
            f"Solver {cfg.solver} stopped with status {status} after {iters} "
            f"iterations (objective {problem.value})",
            status=str(status),
        )
    if status == cp.OPTIMAL_INACCURATE:
        log.warning(f"Solver {cfg.solver} returned an inaccurate solution")
    log.info(f"SDP solved in {elapsed:.2f} s ({iters} iterations), status {status}")
    return status, elapsed


def _recover(X: np.ndarray, P: np.ndarray, name: str) -> np.ndarray:
    """Solve ``A P = X`` for A against the symmetric P."""
    A = linalg.solve(P, X.T, assume_a="sym").T
    scale = max(float(np.linalg.norm(X)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(X - A @ P)) / scale
    if residual > RECOVERY_RESIDUAL_TOL:
        log.warning(f"Recovery of {name} has relative residual {residual:.3e}")
    return A


def _cost_margin(K, P, X, Bv, Z, slack, p_theta) -> float:
    Kp = K.copy()
    Kp[:, :p_theta] = K[:, :p_theta] @ P
    E = Kp - np.hstack([X, Bv])
    block = np.block([[Z, E.T], [E, slack * np.eye(p_theta)]])
    return sym_eig_min(block)


def _normalise_margins(margins: Dict[str, float], p_norm: float) -> Dict[str, float]:
    """Divide the margins of constraints linear in P by ``max(1, ||P||_2)``."""
    scale = max(1.0, p_norm)
    return {
        k: v / scale if k in P_SCALED_MARGINS else v for k, v in margins.items()
    }


def _check_margins(margins: Dict[str, float], cfg: StabilityConfig) -> None:
    floor = -cfg.feas_tol
    bad = {k: v for k, v in margins.items() if v < floor}
    if bad:
        log.warning(f"Constraint margins below feasibility tolerance: {bad}")


def _value(var, shape) -> np.ndarray:
    if var is None:
        return np.zeros(shape)
    return np.asarray(var.value, dtype=float).reshape(shape)


def solve_forward_as(
    g: GramPair, p_dims: Tuple[int, int], cfg: StabilityConfig
) -> StabilitySolution:
    """
    EDMD with an asymptotic-stability constraint, in convex form.

    Minimizes ``gamma`` subject to ``tr(Z) < 1``, ``Z > 0``, the cost LMI on
    ``G_f H_f^+ Pbar - [X_f B_ff]``, ``P - eps 1 > 0`` and
    ``[[rho P, X_f], [X_f^T, rho P]] > 0``. ``A_ff = X_f P^{-1}``.

    :param g: Forward Gram pair.
    :param p_dims: (p_theta, p_upsilon).
    :param cfg: Problem settings.
    :return: Solution with margins.
    """
    if g.direction != FORWARD:
        raise InvalidInputError(f"Expected forward Gram matrices, got {g.direction}")
    p_theta, p_upsilon = _validate_dims(g, p_dims)
    p = p_theta + p_upsilon
    epsilon, mu = _resolve(cfg, g)
    rho = cfg.rho_bar
    K = g.G @ pinv(g.H)

    P = cp.Variable((p_theta, p_theta), symmetric=True)
    X = cp.Variable((p_theta, p_theta))
    Bv = cp.Variable((p_theta, p_upsilon)) if p_upsilon else None
    Z = cp.Variable((p, p), symmetric=True)
    gamma = cp.Variable()
    constraints = _slack_constraints(Z, p, mu) + [
        _cost_lmi(K, P, X, Bv, Z, gamma, p_theta, p_upsilon, mu),
        _p_floor(P, epsilon, p_theta, mu),
        _forward_stability(P, X, rho, p_theta, mu),
    ]
    problem = cp.Problem(cp.Minimize(gamma), constraints)
    status, elapsed = _solve(problem, cfg, n_lmis=4)

    P_val = symmetrize(P.value)
    X_val = _value(X, (p_theta, p_theta))
    B_val = _value(Bv, (p_theta, p_upsilon))
    Z_val = symmetrize(Z.value)
    gamma_val = float(gamma.value)
    A_ff = _recover(X_val, P_val, "A_ff")
    margins = {
        "trace_Z": 1.0 - float(np.trace(Z_val)),
        "Z": sym_eig_min(Z_val),
        "cost_forward": _cost_margin(K, P_val, X_val, B_val, Z_val, gamma_val, p_theta),
        "p_floor": sym_eig_min(P_val) - epsilon,
        "stability_forward": sym_eig_min(
            np.block([[rho * P_val, X_val], [X_val.T, rho * P_val]])
        ),
        "lyapunov_forward": -check_forward_lmi(A_ff, P_val, rho),
    }
    margins = _normalise_margins(margins, spectral_norm(P_val))
    _check_margins(margins, cfg)
    return StabilitySolution(
        X_f=X_val,
        B_ff=B_val,
        P=P_val,
        gamma=gamma_val,
        A_ff=A_ff,
        rho_bar=rho,
        epsilon=epsilon,
        mu=mu,
        status=str(status),
        solve_time=elapsed,
        margins=margins,
    )


def solve_combined(
    gf: GramPair, gb: GramPair, p_dims: Tuple[int, int], cfg: StabilityConfig
) -> StabilitySolution:
    """
    Forward and backward Koopman matrices from one convex problem sharing a
    common Lyapunov variable P.

    Minimizes ``gamma + nu`` under both cost LMIs (slacks Z and V), the
    forward stability LMI, ``rho (X_b + X_b^T) - 2 P > 0`` and
    ``P - eps 1 > 0``. ``A_ff = X_f P^{-1}``, ``A_bb = X_b P^{-1}``.

    :param gf: Forward Gram pair.
    :param gb: Backward Gram pair.
    :param p_dims: (p_theta, p_upsilon).
    :param cfg: Problem settings.
    :return: Solution with margins.
    """
    if gf.direction != FORWARD or gb.direction != BACKWARD:
        raise InvalidInputError("Expected a forward and a backward Gram pair")
    if gf.G.shape != gb.G.shape or gf.H.shape != gb.H.shape:
        raise DimensionError(
            f"Forward ({gf.G.shape}) and backward ({gb.G.shape}) Grams differ"
        )
    p_theta, p_upsilon = _validate_dims(gf, p_dims)
    p = p_theta + p_upsilon
    epsilon, mu = _resolve(cfg, gf)
    rho = cfg.rho_bar
    K_f = gf.G @ pinv(gf.H)
    K_b = gb.G @ pinv(gb.H)

    P = cp.Variable((p_theta, p_theta), symmetric=True)
    X_f = cp.Variable((p_theta, p_theta))
    X_b = cp.Variable((p_theta, p_theta))
    B_f = cp.Variable((p_theta, p_upsilon)) if p_upsilon else None
    B_b = cp.Variable((p_theta, p_upsilon)) if p_upsilon else None
    Z = cp.Variable((p, p), symmetric=True)
    V = cp.Variable((p, p), symmetric=True)
    gamma = cp.Variable()
    nu = cp.Variable()
    constraints = (
        _slack_constraints(Z, p, mu)
        + _slack_constraints(V, p, mu)
        + [
            _cost_lmi(K_f, P, X_f, B_f, Z, gamma, p_theta, p_upsilon, mu),
            _cost_lmi(K_b, P, X_b, B_b, V, nu, p_theta, p_upsilon, mu),
            _p_floor(P, epsilon, p_theta, mu),
            _forward_stability(P, X_f, rho, p_theta, mu),
            _backward_stability(P, X_b, rho, p_theta, mu),
        ]
    )
    problem = cp.Problem(cp.Minimize(gamma + nu), constraints)
    status, elapsed = _solve(problem, cfg, n_lmis=7)

    P_val = symmetrize(P.value)
    Xf_val = _value(X_f, (p_theta, p_theta))
    Xb_val = _value(X_b, (p_theta, p_theta))
    Bf_val = _value(B_f, (p_theta, p_upsilon))
    Bb_val = _value(B_b, (p_theta, p_upsilon))
    Z_val = symmetrize(Z.value)
    V_val = symmetrize(V.value)
    gamma_val = float(gamma.value)
    nu_val = float(nu.value)
    A_ff = _recover(Xf_val, P_val, "A_ff")
    A_bb = _recover(Xb_val, P_val, "A_bb")
    backward = check_backward_lmi(A_bb, P_val, rho)
    margins = {
        "trace_Z": 1.0 - float(np.trace(Z_val)),
        "trace_V": 1.0 - float(np.trace(V_val)),
        "Z": sym_eig_min(Z_val),
        "V": sym_eig_min(V_val),
        "cost_forward": _cost_margin(
            K_f, P_val, Xf_val, Bf_val, Z_val, gamma_val, p_theta
        ),
        "cost_backward": _cost_margin(
            K_b, P_val, Xb_val, Bb_val, V_val, nu_val, p_theta
        ),
        "p_floor": sym_eig_min(P_val) - epsilon,
        "stability_forward": sym_eig_min(
            np.block([[rho * P_val, Xf_val], [Xf_val.T, rho * P_val]])
        ),
        "stability_backward": sym_eig_min(rho * (Xb_val + Xb_val.T) - 2.0 * P_val),
        "lyapunov_forward": -check_forward_lmi(A_ff, P_val, rho),
        "lyapunov_backward": backward.quadratic,
    }
    margins = _normalise_margins(margins, spectral_norm(P_val))
    _check_margins(margins, cfg)
    return StabilitySolution(
        X_f=Xf_val,
        B_ff=Bf_val,
        P=P_val,
        gamma=gamma_val,
        A_ff=A_ff,
        rho_bar=rho,
        epsilon=epsilon,
        mu=mu,
        status=str(status),
        solve_time=elapsed,
        X_b=Xb_val,
        B_bb=Bb_val,
        nu=nu_val,
        A_bb=A_bb,
        margins=margins,
    )


def models_from_solution(
    sol: StabilitySolution, spec: LiftingSpec
) -> Tuple[KoopmanModel, Optional[KoopmanModel]]:
    """
    Forward (and, for combined solutions, backward) models tagged ``edmd-as``.
    """
    forward = KoopmanModel(
        A=sol.A_ff, B=sol.B_ff, spec=spec, method=METHOD_EDMD_AS, direction=FORWARD
    )
    backward = None
    if sol.combined:
        backward = KoopmanModel(
            A=sol.A_bb,
            B=sol.B_bb,
            spec=spec,
            method=METHOD_EDMD_AS,
            direction=BACKWARD,
        )
    return forward, backward


def dump_conic_program(
    problem: cp.Problem, path: Union[str, Path], solver: str = DEFAULT_SOLVER
) -> None:
    """
    Write the conic program handed to ``solver`` as plain text: cone sizes,
    the objective vector, and ``A x + s = b`` with A in coordinate triplets.

    :param problem: Assembled cvxpy problem.
    :param path: Output file.
    :param solver: Solver whose standard form is dumped.
    """
    data, _, _ = problem.get_problem_data(solver)
    dims = data["dims"]
    c = np.asarray(data["c"], dtype=float)
    A = scipy.sparse.coo_matrix(data["A"])
    b = np.asarray(data["b"], dtype=float)
    lines = [
        "# koopid conic program: minimize c'x s.t. A x + s = b, s in K",
        f"solver {solver}",
        f"variables {c.shape[0]}",
        f"rows {A.shape[0]}",
        f"cone zero {getattr(dims, 'zero', 0)}",
        f"cone nonneg {getattr(dims, 'nonneg', 0)}",
        f"cone soc {' '.join(str(s) for s in getattr(dims, 'soc', []))}",
        f"cone psd {' '.join(str(s) for s in getattr(dims, 'psd', []))}",
        "objective",
    ]
    lines += [f"{i} {v!r}" for i, v in enumerate(c) if v != 0.0]
    lines.append("constraints")
    lines += [f"{i} {j} {v!r}" for i, j, v in zip(A.row, A.col, A.data)]
    lines.append("rhs")
    lines += [f"{i} {v!r}" for i, v in enumerate(b) if v != 0.0]
    atomic_write_text(path, "\n".join(lines) + "\n")
    log.info(f"Conic program written to {path}")
