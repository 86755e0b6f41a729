"""Laplacian-regularized graph filtering solved by Gauss-Seidel iteration.

The filtering problem minimizes

    J(H) = 1/2 * ||H - X||_F^2 + beta/2 * tr(H^T L H)

whose stationarity condition is the linear system ``(I + beta * L) H = X``.
Three routes to ``H`` are provided: a dense direct solve (the oracle), the
exact Gauss-Seidel iteration on the triangular split, and a cheaper variant
that replaces the triangular inverse by its first-order Neumann expansion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, TransformerMixin

from .skeleton import MatrixSplit, NormalizedAdjacency, normalize_adjacency, \
    normalized_laplacian, triangular_split
from .validation import check_array, check_in_range, check_same_shape, check_square


@dataclass(frozen=True)
class FilterConfig:
    """Solver settings: regularization weight and stopping rule.

    ``beta = 0`` is admitted as the degenerate identity system even though
    the filter is only interesting for positive values.
    """

    beta: float
    tol: float = 1e-10
    max_iters: int = 1000

    def __post_init__(self):
        check_in_range(self.beta, "beta", 0.0, 1.0)
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")


@dataclass(frozen=True)
class SolveReport:
    """Solution plus convergence diagnostics of an iterative solve."""

    solution: np.ndarray
    iterations: int
    final_residual: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
        }


def smoothing_objective(h, x, laplacian, beta: float) -> float:
    """Evaluate ``1/2 ||H - X||_F^2 + beta/2 tr(H^T L H)``."""
    h = check_array(h, "h", ndim=2)
    x = check_array(x, "x", ndim=2)
    check_same_shape(h, x, "h", "x")
    lap = check_square(laplacian, "laplacian", n=h.shape[0])
    fidelity = 0.5 * float(np.sum((h - x) ** 2))
    smooth = 0.5 * beta * float(np.sum(h * (lap @ h)))
    return fidelity + smooth


def smoothing_gradient(h, x, laplacian, beta: float) -> np.ndarray:
    """Gradient of the filtering objective: ``H - X + beta * L @ H``."""
    h = check_array(h, "h", ndim=2)
    x = check_array(x, "x", ndim=2)
    check_same_shape(h, x, "h", "x")
    lap = check_square(laplacian, "laplacian", n=h.shape[0])
    return h - x + beta * (lap @ h)


def direct_solve(x, laplacian, beta: float) -> np.ndarray:
    """Dense exact solve of ``(I + beta * L) H = X``.

    ``I + beta * L`` is symmetric positive definite for ``beta >= 0``, so
    the system is always solvable. This is the oracle the iterative
    variants are checked against.
    """
    x = check_array(x, "x", ndim=2)
    lap = check_square(laplacian, "laplacian", n=x.shape[0])
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    n = x.shape[0]
    return np.linalg.solve(np.eye(n) + beta * lap, x)


def relative_residual(system: np.ndarray, h: np.ndarray, x: np.ndarray) -> float:
    """Relative Frobenius residual ``||A H - X|| / ||X||`` (absolute if X = 0)."""
    num = float(np.linalg.norm(system @ h - x))
    den = float(np.linalg.norm(x))
    return num / den if den > 0 else num


def gauss_seidel_solve(x, split: MatrixSplit, config: FilterConfig) -> SolveReport:
    """Solve ``(I + beta * L) H = X`` by Gauss-Seidel iteration.

    Each sweep solves the lower-triangular system
    ``((1 + beta) I - upper.T) H_new = upper @ H + X`` by forward
    substitution; the triangular factor is never inverted explicitly.
    Iteration starts from ``H = X`` and stops once the relative Frobenius
    residual drops to ``config.tol`` or ``config.max_iters`` is reached.
    Non-convergence is reported through the ``converged`` flag, not raised.
    """
    x = check_array(x, "x", ndim=2)
    if split.num_nodes != x.shape[0]:
        raise ValueError(
            f"x has {x.shape[0]} rows but the split is {split.num_nodes}x{split.num_nodes}"
        )
    if split.beta != config.beta:
        raise ValueError(
            f"split built for beta={split.beta} but config.beta={config.beta}"
        )
    n = split.num_nodes
    lower_factor = split.scale * np.eye(n) - split.upper.T
    system = split.system_matrix()

    h = x.copy()
    residual = np.inf
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        h = solve_triangular(lower_factor, split.upper @ h + x, lower=True)
        residual = relative_residual(system, h, x)
        if residual <= config.tol:
            break
    return SolveReport(
        solution=h,
        iterations=iterations,
        final_residual=residual,
        converged=residual <= config.tol,
    )


def neumann_inverse_approx(split: MatrixSplit) -> np.ndarray:
    """First-order approximation of ``((1 + beta) I - upper.T)^{-1}``.

    Writing the factor as ``I - (upper.T - beta * I)`` and keeping the
    series through the linear term gives ``(1 - beta) I + upper.T``; the
    discarded tail is valid because the strictly triangular perturbation
    has spectral radius ``beta < 1``.
    """
    n = split.num_nodes
    return (1.0 - split.beta) * np.eye(n) + split.upper.T


def approx_gauss_seidel_step(h, x, split: MatrixSplit) -> np.ndarray:
    """One Gauss-Seidel sweep with the first-order inverse approximation.

    Returns ``K @ upper @ H + K @ X`` where ``K = (1 - beta) I + upper.T``.
    """
    h = check_array(h, "h", ndim=2)
    x = check_array(x, "x", ndim=2)
    check_same_shape(h, x, "h", "x")
    if split.num_nodes != h.shape[0]:
        raise ValueError(
            f"h has {h.shape[0]} rows but the split is {split.num_nodes}x{split.num_nodes}"
        )
    k = neumann_inverse_approx(split)
    return k @ (split.upper @ h) + k @ x


def approx_solve(x, split: MatrixSplit, config: FilterConfig) -> SolveReport:
    """Iterate the approximate sweep until the residual or iterate stalls.

    The approximate map converges to a fixed point that differs from the
    exact solution by an ``O(beta^2)`` bias, so ``converged`` is only set
    when the true relative residual actually reaches ``config.tol``.
    Iteration stops early once successive iterates agree to ``config.tol``.
    """
    x = check_array(x, "x", ndim=2)
    system = split.system_matrix()
    h = x.copy()
    residual = relative_residual(system, h, x)
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        h_next = approx_gauss_seidel_step(h, x, split)
        step = float(np.linalg.norm(h_next - h))
        h = h_next
        residual = relative_residual(system, h, x)
        if residual <= config.tol or step <= config.tol:
            break
    return SolveReport(
        solution=h,
        iterations=iterations,
        final_residual=residual,
        converged=residual <= config.tol,
    )


class GraphFilter(BaseEstimator, TransformerMixin):
    """Laplacian-regularized smoothing filter as a scikit-learn transformer.

    ``fit`` takes the graph (a dense binary adjacency matrix) and
    precomputes the normalized operators; ``transform`` filters an
    ``N x F`` feature matrix whose rows are node signals.

    Parameters
    ----------
    beta : regularization weight in ``[0, 1)``.
    tol : relative residual threshold for the iterative methods.
    max_iters : iteration cap.
    method : "exact" (Gauss-Seidel), "approx" (first-order Neumann sweeps),
        or "direct" (dense solve).
    """

    def __init__(self, beta: float = 0.2, tol: float = 1e-10,
                 max_iters: int = 1000, method: str = "exact"):
        self.beta = beta
        self.tol = tol
        self.max_iters = max_iters
        self.method = method

    def fit(self, X, y=None):
        """Precompute normalized adjacency, Laplacian, and split from ``X``.

        ``X`` is the dense symmetric binary adjacency matrix of the graph.
        """
        adjacency = check_square(X, "adjacency")
        self.normalized_adjacency_ = normalize_adjacency(adjacency)
        self.laplacian_ = normalized_laplacian(self.normalized_adjacency_)
        self.split_ = triangular_split(self.normalized_adjacency_, self.beta)
        self.config_ = FilterConfig(beta=self.beta, tol=self.tol, max_iters=self.max_iters)
        return self

    def solve(self, X) -> SolveReport:
        """Filter node features and return the full solve report."""
        if not hasattr(self, "split_"):
            raise RuntimeError("GraphFilter must be fitted with an adjacency matrix first")
        features = check_array(X, "features", ndim=2)
        if self.method == "direct":
            h = direct_solve(features, self.laplacian_, self.beta)
            residual = relative_residual(self.split_.system_matrix(), h, features)
            return SolveReport(solution=h, iterations=0,
                               final_residual=residual, converged=residual <= self.tol)
        if self.method == "exact":
            return gauss_seidel_solve(features, self.split_, self.config_)
        if self.method == "approx":
            return approx_solve(features, self.split_, self.config_)
        raise ValueError(f"unknown method {self.method!r}")

    def transform(self, X) -> np.ndarray:
        """Filter an ``N x F`` feature matrix, returning the smoothed copy."""
        return self.solve(X).solution
