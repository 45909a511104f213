# Exception hierarchy shared by every koopid module


class KoopidError(Exception):
    """Base class for all errors raised by koopid."""


class InvalidInputError(KoopidError, ValueError):
    """Input data is malformed, non-finite, or outside its valid range."""


class DimensionError(InvalidInputError):
    """Array shapes are inconsistent with each other or with a lifting spec."""


class UnsupportedRecoveryError(InvalidInputError):
    """The raw state cannot be read back from a lifted state."""


class UndefinedReferenceError(InvalidInputError):
    """A relative error was requested against a zero-norm reference."""


class NumericError(KoopidError, RuntimeError):
    """A numerical routine failed or produced a non-finite result."""


class NoPrincipalRootError(NumericError):
    """The Schur recursion hit a zero divisor, so no principal root exists."""


class ComplexRootError(NumericError):
    """The principal square root of a real matrix is genuinely complex."""

    def __init__(self, magnitude: float, tolerance: float):
        self.magnitude = magnitude
        self.tolerance = tolerance
        super().__init__(
            f"Principal square root is complex: imaginary magnitude "
            f"{magnitude:.3e} exceeds tolerance {tolerance:.3e}"
        )


class ConditioningError(NumericError):
    """A matrix that must be inverted is singular or too ill-conditioned."""

    def __init__(self, name: str, condition: float, cap: float):
        self.condition = condition
        self.cap = cap
        super().__init__(
            f"Matrix {name} is ill-conditioned: condition number "
            f"{condition:.3e} exceeds cap {cap:.3e}"
        )


class SimulationDivergedError(NumericError):
    """A simulated trajectory became non-finite."""

    def __init__(self, step: int, episode_id: str = ""):
        self.step = step
        self.episode_id = episode_id
        where = f" in episode {episode_id}" if episode_id else ""
        super().__init__(f"Simulation diverged at step {step}{where}")


class SolverError(NumericError):
    """The conic solver failed or returned an unusable status."""

    def __init__(self, message: str, status: str = "unknown"):
        self.status = status
        super().__init__(message)


class InfeasibleProblemError(SolverError):
    """The conic solver certified the problem infeasible."""

    def __init__(self, status: str, summary: str):
        self.summary = summary
        super().__init__(f"Problem is {status}: {summary}", status=status)
