"""Ridge-regression objective, gradients, and the exact-solution oracle.

The objective is F(alpha) = 0.5 * ||A alpha - y||^2 + 0.5 * lambda * ||alpha||^2
with no 1/m factor; lambda absorbs any rescaling.  Suboptimality is measured
relative to the exact optimum F* as (F - F*) / max(1, |F*|), which stays
well defined when F* is near zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import SparseMatrix
from .errors import ConfigurationError, OracleInconsistencyError

DENSE_SOLVE_CAP = 10_000
SUBOPT_CLAMP = 1e-10
SUBOPT_INCONSISTENCY = 1e-6


@dataclass
class RidgeProblem:
    A: SparseMatrix
    y: np.ndarray
    lam: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.y.shape != (self.A.n_rows,):
            raise ValueError("label vector length must equal the number of rows")
        self._f_star: float | None = None

    @property
    def m(self) -> int:
        return self.A.n_rows

    @property
    def n(self) -> int:
        return self.A.n_cols

    def f_star(self) -> float:
        """Optimal objective value, solved once and cached."""
        if self._f_star is None:
            self._f_star = objective_value(self, solve_exact(self))
        return self._f_star


@dataclass
class Suboptimality:
    value: float
    reference_optimum: float


def objective_value(p: RidgeProblem, alpha: np.ndarray, v: np.ndarray | None = None,
                    check_v: bool = False) -> float:
    """F(alpha); pass ``v = A @ alpha`` to skip the matrix product."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (p.n,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({p.n},)")
    if v is None:
        v = p.A.matvec(alpha)
    else:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (p.m,):
            raise ValueError("v has wrong dimension")
        if check_v:
            ref = p.A.matvec(alpha)
            scale = max(1.0, float(np.linalg.norm(ref)))
            if np.linalg.norm(v - ref) > 1e-8 * scale:
                raise ValueError("supplied v is not A @ alpha")
    r = v - p.y
    return 0.5 * float(r @ r) + 0.5 * p.lam * float(alpha @ alpha)


def objective_from_parts(v: np.ndarray, y: np.ndarray, lam: float, alpha_sq: float) -> float:
    """F from the shared vector plus the reduced sum of alpha_i^2."""
    r = v - y
    return 0.5 * float(r @ r) + 0.5 * lam * float(alpha_sq)


def solve_exact(p: RidgeProblem, dense_cap: int = DENSE_SOLVE_CAP,
                iterative_fallback: bool = True) -> np.ndarray:
    """Exact ridge solution via normal equations (A^T A + lambda I) a = A^T y.

    Dense Cholesky up to ``dense_cap`` features, conjugate gradient to a
    1e-12 relative residual beyond that.  lambda > 0 rules out singularity.
    """
    aty = p.A.rmatvec(p.y)
    scale = max(1.0, float(np.linalg.norm(aty)))
    if p.n <= dense_cap:
        from scipy.linalg import cho_factor, cho_solve

        gram = (p.A.to_scipy().T @ p.A.to_scipy()).toarray()
        gram[np.diag_indices_from(gram)] += p.lam
        alpha = cho_solve(cho_factor(gram), aty)
    elif iterative_fallback:
        from scipy.sparse.linalg import LinearOperator, cg

        As = p.A.to_scipy()

        def matvec(x):
            return As.T @ (As @ x) + p.lam * x

        op = LinearOperator((p.n, p.n), matvec=matvec)
        alpha, info = cg(op, aty, rtol=1e-12, atol=0.0, maxiter=50 * p.n)
        if info != 0:
            raise ConfigurationError(f"conjugate gradient did not converge (info={info})")
    else:
        raise ConfigurationError(
            f"n={p.n} exceeds the dense solve cap ({dense_cap}) and the iterative "
            "fallback is disabled"
        )

    grad = p.A.rmatvec(p.A.matvec(alpha) - p.y) + p.lam * alpha
    if np.linalg.norm(grad) > 1e-8 * scale:
        raise ConfigurationError("exact solve failed its stationarity check")
    return alpha


def suboptimality(p: RidgeProblem, alpha: np.ndarray, f_star: float) -> Suboptimality:
    """Relative gap (F(alpha) - F*) / max(1, |F*|), clamped against noise."""
    return suboptimality_of(objective_value(p, alpha), f_star)


def suboptimality_of(f: float, f_star: float) -> Suboptimality:
    denom = max(1.0, abs(f_star))
    gap = (f - f_star) / denom
    if gap < -SUBOPT_INCONSISTENCY:
        raise OracleInconsistencyError(
            f"objective {f} is below the reference optimum {f_star} beyond tolerance"
        )
    if -SUBOPT_CLAMP <= gap < 0:
        gap = 0.0
    return Suboptimality(value=gap, reference_optimum=f_star)


def coordinate_gradient(p: RidgeProblem, i: int, v: np.ndarray, alpha_i: float) -> float:
    """dF/dalpha_i at the point where v = A @ alpha."""
    rows, vals = p.A.column(i)
    return float(vals @ (v[rows] - p.y[rows])) + p.lam * float(alpha_i)
