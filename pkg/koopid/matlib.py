# Dense numerical kernels: pseudoinverse, complex Schur, principal sqrtm, spectra
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .constants import PINV_REL_TOL, SQRTM_IMAG_TOL
from .errors import (
    ComplexRootError,
    DimensionError,
    InvalidInputError,
    NoPrincipalRootError,
    NumericError,
)

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True)
class ComplexSchurFactors:
    """
    Complex Schur factors ``M = Q T Q^H`` with ``Q`` unitary and ``T`` upper
    triangular. The diagonal of ``T`` holds the eigenvalues of ``M``.
    """

    q: np.ndarray
    t: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.diag(self.t).copy()


class SqrtmResult(NamedTuple):
    root: np.ndarray
    discarded_imag: float


def as_matrix(M, name: str = "M") -> np.ndarray:
    """
    Validate and convert ``M`` to a finite 2-D float array.

    :param M: Array-like input.
    :param name: Name used in error messages.
    :return: ``M`` as a float64 array.
    """
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _as_square(M, name: str = "M") -> np.ndarray:
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def pinv(M, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse. Singular values below ``rel_tol`` times the
    largest one are truncated.

    :param M: Real matrix.
    :param rel_tol: Relative truncation threshold (> 0).
    :return: ``M^+``.
    """
    if rel_tol <= 0:
        raise InvalidInputError(f"rel_tol must be positive, got {rel_tol}")
    arr = as_matrix(M)
    return linalg.pinv(arr, atol=0.0, rtol=rel_tol)


def schur_iteration_limit(n: int) -> int:
    """LAPACK QR sweep limit for the Schur form of an n x n matrix."""
    return 30 * max(10, n)


def schur_complex(M) -> ComplexSchurFactors:
    """
    Complex Schur decomposition ``M = Q T Q^H``.

    :param M: Real square matrix.
    :return: Schur factors.
    """
    arr = _as_square(M)
    try:
        t, q = linalg.schur(arr, output="complex")
    except linalg.LinAlgError as e:
        n = arr.shape[0]
        raise NumericError(
            f"Schur QR iteration did not converge for {n}x{n} matrix within "
            f"{schur_iteration_limit(n)} iterations: {e}"
        ) from e
    return ComplexSchurFactors(q=q, t=np.triu(t))


def _sqrt_upper_triangular(t: np.ndarray) -> np.ndarray:
    """Square root of an upper-triangular matrix, column by column."""
    n = t.shape[0]
    s = np.zeros_like(t, dtype=complex)
    diag = np.sqrt(np.diag(t).astype(complex))
    scale = max(np.max(np.abs(t)), np.finfo(float).tiny)
    tiny = np.finfo(float).eps * scale
    for j in range(n):
        s[j, j] = diag[j]
        for i in range(j - 1, -1, -1):
            numerator = t[i, j] - s[i, i + 1 : j] @ s[i + 1 : j, j]
            divisor = s[i, i] + s[j, j]
            if abs(divisor) <= tiny:
                if abs(numerator) <= tiny:
                    # 0/0 on a zero block: the root is zero there
                    s[i, j] = 0.0
                    continue
                raise NoPrincipalRootError(
                    f"Square root recursion divisor S[{i},{i}] + S[{j},{j}] "
                    f"vanishes; matrix has no principal square root"
                )
            s[i, j] = numerator / divisor
    return s


def sqrtm_report(M, imag_tol: float = SQRTM_IMAG_TOL) -> SqrtmResult:
    """
    Principal square root through complex Schur triangularization and the
    triangular recursion ``S_ii^2 = T_ii``,
    ``S_ij = (T_ij - sum_k S_ik S_kj) / (S_ii + S_jj)``.

    :param M: Real square matrix.
    :param imag_tol: Relative tolerance for discarding imaginary residue.
    :return: Real root and the magnitude of the discarded imaginary part.
    """
    factors = schur_complex(M)
    s = _sqrt_upper_triangular(factors.t)
    root = factors.q @ s @ factors.q.conj().T
    imag = float(np.linalg.norm(root.imag))
    scale = max(float(np.linalg.norm(root)), np.finfo(float).tiny)
    if imag > imag_tol * scale:
        raise ComplexRootError(imag / scale, imag_tol)
    if imag > 0.0:
        log.debug(f"Discarding imaginary residue {imag:.3e} from square root")
    return SqrtmResult(root=np.ascontiguousarray(root.real), discarded_imag=imag)


def sqrtm(M, imag_tol: float = SQRTM_IMAG_TOL) -> np.ndarray:
    """
    Principal square root of a real matrix, see :func:`sqrtm_report`.

    :param M: Real square matrix.
    :param imag_tol: Relative tolerance for discarding imaginary residue.
    :return: Real matrix ``R`` with ``R @ R == M``.
    """
    return sqrtm_report(M, imag_tol).root


def eigenvalues(M) -> np.ndarray:
    """Eigenvalues of ``M`` read from the complex Schur diagonal."""
    return schur_complex(M).eigenvalues


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of ``M``."""
    return float(np.max(np.abs(eigenvalues(M))))


def min_eig_modulus(M) -> float:
    """Smallest eigenvalue modulus of ``M``."""
    return float(np.min(np.abs(eigenvalues(M))))


def spectral_norm(M) -> float:
    """Largest singular value of ``M``."""
    arr = as_matrix(M)
    if arr.size == 0:
        return 0.0
    return float(linalg.svdvals(arr)[0])


def condition_number(M) -> float:
    """2-norm condition number of a square matrix, ``inf`` when singular."""
    arr = _as_square(M)
    sv = linalg.svdvals(arr)
    if sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def symmetrize(M) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    return 0.5 * (arr + arr.T)


def sym_eig_min(M) -> float:
    """Smallest eigenvalue of the symmetric part of ``M``."""
    return float(linalg.eigvalsh(symmetrize(M))[0])


def sym_eig_max(M) -> float:
    """Largest eigenvalue of the symmetric part of ``M``."""
    return float(linalg.eigvalsh(symmetrize(M))[-1])


def is_symmetric(M, rel_tol: float = 1e-10) -> bool:
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        return False
    scale = max(float(np.max(np.abs(arr), initial=0.0)), 1.0)
    return bool(np.max(np.abs(arr - arr.T), initial=0.0) <= rel_tol * scale)
