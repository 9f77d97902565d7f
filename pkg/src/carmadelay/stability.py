"""
Numerical checks of the standing root-location assumptions.

* causality: ``det P(z) != 0`` for ``Re z >= 0``
* invertibility: the same for ``Q``
* solvability of a first-order delay equation: ``det h(iy) != 0`` on the real line
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matpoly import MatrixPoly, companion_of
from .measures import DelayMeasure


@dataclass
class HalfPlaneReport:
    eigenvalues: np.ndarray
    max_real_part: float
    passed: bool
    margin: float
    tol: float = 1e-9
    status: str = "ok"
    notes: list = field(default_factory=list)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: max Re(eig) = {self.max_real_part:.6g}, "
                f"margin = {self.margin:.6g} ({self.status})")


def halfplane_check(P: MatrixPoly, tol: float = 1e-9) -> HalfPlaneReport:
    """Whether every root of ``det P`` lies strictly left of ``Re z = -tol``.

    The roots are the eigenvalues of the block companion matrix. An eigensolver
    failure is reported as a failed check with ``status`` set, never as a pass.
    """
    if not P.is_monic():
        raise ValueError("P must be monic")
    A = companion_of(P)
    if A.size == 0:
        # constant monic polynomial: det P = 1 never vanishes
        return HalfPlaneReport(np.zeros(0, dtype=complex), -np.inf, True, np.inf, tol)
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        return HalfPlaneReport(np.zeros(0, dtype=complex), np.nan, False, np.nan, tol,
                               status=f"eigensolver failed: {exc}")
    if not np.all(np.isfinite(eig)):
        return HalfPlaneReport(eig, np.nan, False, np.nan, tol, status="non-finite eigenvalues")
    mx = float(np.max(eig.real))
    return HalfPlaneReport(eig, mx, mx < -tol, -mx, tol)


def default_scan_grid(eta: DelayMeasure, points: int = 4096) -> np.ndarray:
    """Symmetric grid on ``[-Y, Y]`` with ``Y = 50 * max(1, total variation of eta)``."""
    Y = 50.0 * max(1.0, eta.total_variation())
    return np.linspace(-Y, Y, points)


def msdde_char_scan(eta: DelayMeasure, y_grid=None):
    """Minimum of ``|det h(iy)|`` over a grid and where it is attained.

    This is evidence, not proof, that ``h(iy)`` is invertible on the real line.
    """
    from .msdde import eval_h_many

    y = default_scan_grid(eta) if y_grid is None else np.asarray(y_grid, dtype=float)
    if y.size == 0:
        raise ValueError("empty scan grid")
    d = np.abs(np.linalg.det(eval_h_many(eta, 1j * y)))
    k = int(np.argmin(d))
    return float(d[k]), float(y[k])
