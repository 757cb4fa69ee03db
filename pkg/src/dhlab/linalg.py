"""Small dense solves used by the estimators.

The 2x2, 3x3 and 4x4 normal-equation blocks are inverted in closed form; the
9x9 information matrix goes through a pivoted LU factorization.  Every solve
first checks the singular values so that a rank-deficient system raises
instead of silently returning a pseudo-inverse.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import SingularMatrix

#: Relative singular-value cutoff below which a matrix counts as singular.
RCOND = 1e-12


def condition_number(a: np.ndarray) -> float:
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def check_rank(a: np.ndarray, error=SingularMatrix, what: str = "matrix") -> float:
    """Raise ``error`` when ``sigma_min < RCOND * sigma_max``; return the condition number."""
    if not np.all(np.isfinite(a)):
        raise error(f"{what} has non-finite entries", condition=float("inf"))
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0 or s[-1] < RCOND * s[0]:
        cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
        raise error(f"{what} is numerically singular (condition number {cond:.3g})", condition=cond)
    return float(s[0] / s[-1])


def inv2(a: np.ndarray) -> np.ndarray:
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det


def inv3(a: np.ndarray) -> np.ndarray:
    """Adjugate formula."""
    c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
    adj = np.array(
        [
            [c00, a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2], a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]],
            [c01, a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0], a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]],
            [c02, a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]],
        ]
    )
    return adj / det


def inv4(a: np.ndarray) -> np.ndarray:
    """Inverse through the 2x2 Schur complement of the leading block."""
    p, q = a[:2, :2], a[:2, 2:]
    r, s = a[2:, :2], a[2:, 2:]
    p_inv = inv2(p)
    schur_inv = inv2(s - r @ p_inv @ q)
    top_right = -p_inv @ q @ schur_inv
    bottom_left = -schur_inv @ r @ p_inv
    top_left = p_inv + p_inv @ q @ schur_inv @ r @ p_inv
    return np.block([[top_left, top_right], [bottom_left, schur_inv]])


_SMALL = {2: inv2, 3: inv3, 4: inv4}


def small_inverse(a: np.ndarray, error=SingularMatrix, what: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    check_rank(a, error, what)
    return _SMALL[a.shape[0]](a)


def solve(a: np.ndarray, b: np.ndarray, error=SingularMatrix, what: str = "matrix"):
    """Pivoted LU solve after the rank check; returns ``(x, condition)``."""
    cond = check_rank(a, error, what)
    return lu_solve(lu_factor(a), b), cond


def inverse(a: np.ndarray, error=SingularMatrix, what: str = "matrix"):
    x, cond = solve(a, np.eye(a.shape[0]), error, what)
    return x, cond


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def assert_psd(a: np.ndarray, tol: float = 1e-10, what: str = "matrix") -> None:
    lowest = float(np.linalg.eigvalsh(a).min())
    if lowest < -tol * max(1.0, float(np.abs(a).max())):
        raise SingularMatrix(f"{what} is not positive semidefinite (min eigenvalue {lowest:.3g})")
