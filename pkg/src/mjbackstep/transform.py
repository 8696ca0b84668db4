"""Volterra transform ``(w, z, X) -> (theta, rho, X)``, its inverse and the boundary control.

With trapezoidal quadrature on a uniform state grid,

    theta = w
    rho(x) = z(x) - int_0^x K(x,xi) w(xi) dxi - int_0^x N(x,xi) z(xi) dxi - gamma(x) X

and the control

    U = -R w(p) + int_0^1 K(1,xi) w dxi + int_0^1 N(1,xi) z dxi + gamma(1) X

makes ``rho(1) = 0`` once ``z(1) = R w(p) + U`` is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError
from .kernel_solver import KernelGrid, evaluate_kernels

__all__ = [
    "StateSnapshot",
    "TransformedSnapshot",
    "VolterraOperator",
    "volterra_operator",
    "apply_transform",
    "invert_transform",
    "control_input",
    "trapezoid_norm2",
]

REFLECTION_POINTS = ("x0", "x1")


@dataclass
class StateSnapshot:
    """Plant state on a uniform grid: ``w`` (3, M), ``z`` (M,), ``X`` (2,)."""

    x_grid: np.ndarray
    w: np.ndarray
    z: np.ndarray
    X: np.ndarray
    t: float = 0.0
    mode: int = 0

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.X = np.asarray(self.X, dtype=float).ravel()
        m = self.x_grid.size
        if m < 2 or self.w.shape != (3, m) or self.z.shape != (m,) or self.X.shape != (2,):
            raise ValueError("snapshot shapes must be x (M,), w (3, M), z (M,), X (2,)")
        if not np.allclose(np.diff(self.x_grid), self.x_grid[1] - self.x_grid[0], rtol=1e-9, atol=1e-14):
            raise ValueError("snapshot grid must be uniform")

    @property
    def h(self):
        return float(self.x_grid[1] - self.x_grid[0])

    def is_finite(self):
        return bool(np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.X)))

    def scaled(self, c):
        return StateSnapshot(self.x_grid, c * self.w, c * self.z, c * self.X, self.t, self.mode)


@dataclass
class TransformedSnapshot:
    theta: np.ndarray
    rho: np.ndarray
    X: np.ndarray
    x_grid: np.ndarray | None = None


def trapezoid_norm2(values, h):
    """``int ||v||^2 dx`` by the trapezoid rule; ``values`` has x on the last axis."""
    sq = np.asarray(values, dtype=float) ** 2
    if sq.ndim > 1:
        sq = sq.reshape(-1, sq.shape[-1]).sum(axis=0)
    return float(h * (sq.sum() - 0.5 * (sq[0] + sq[-1])))


class VolterraOperator:
    """Kernels sampled on a state grid with trapezoid weights folded in.

    ``WK[i, j, l]`` and ``WN[j, l]`` approximate ``int_0^{x_j} (.) dxi`` as
    a sum over ``l <= j``.  ``gamma`` holds ``gamma(x_j)``.
    """

    def __init__(self, grid: KernelGrid, x_grid):
        x = np.asarray(x_grid, dtype=float)
        m = x.size
        h = float(x[1] - x[0])
        j, l = np.tril_indices(m)
        K, N, gamma = evaluate_kernels(grid, x[j], np.minimum(x[l], x[j]))
        weight = np.where((l == 0) | (l == j), 0.5 * h, h)
        weight[j == 0] = 0.0
        self.WK = np.zeros((3, m, m))
        self.WN = np.zeros((m, m))
        self.WK[:, j, l] = (K * weight[:, None]).T
        self.WN[j, l] = N * weight
        self.gamma = evaluate_kernels(grid, x, x)[2]
        self.h = h
        self.m = m

    def integral_terms(self, w, z, X):
        """``int K w + int N z + gamma X`` at every grid node."""
        return np.einsum("ijl,il->j", self.WK, w) + self.WN @ z + self.gamma @ X


def volterra_operator(k, x_grid) -> VolterraOperator:
    """Return a (cached) :class:`VolterraOperator` for ``k`` on ``x_grid``."""
    if isinstance(k, VolterraOperator):
        return k
    x = np.asarray(x_grid, dtype=float)
    key = (x.size, float(x[0]), float(x[-1]))
    op = k._cache.get(key)
    if op is None:
        op = VolterraOperator(k, x)
        k._cache[key] = op
    return op


def apply_transform(s: StateSnapshot, k) -> TransformedSnapshot:
    """Map a plant state to target coordinates.

    Parameters
    ----------
    s : StateSnapshot
    k : KernelGrid or VolterraOperator
        Kernels; interpolated onto ``s.x_grid`` when the meshes differ.
    """
    op = volterra_operator(k, s.x_grid)
    rho = s.z - op.integral_terms(s.w, s.z, s.X)
    return TransformedSnapshot(theta=s.w.copy(), rho=rho, X=s.X.copy(), x_grid=s.x_grid)


def _march(op, rhs):
    # z_j - WN[j, :j] z[:j] - WN[j, j] z_j = rhs_j
    z = np.empty_like(rhs)
    WN = op.WN
    for j in range(rhs.size):
        z[j] = (rhs[j] + WN[j, :j] @ z[:j]) / (1.0 - WN[j, j])
    return z


def invert_transform(ts: TransformedSnapshot, k, x_grid=None, tol=1e-12, max_iter=100):
    """Recover ``(w, z)`` from target coordinates.

    ``z`` is obtained by forward substitution in ``x`` on the discrete
    second-kind Volterra relation, then refined on the residual until the
    node-wise correction falls below ``tol``.  ``x_grid`` defaults to the
    grid recorded on ``ts``.

    Returns
    -------
    w : ndarray, shape (3, M)
    z : ndarray, shape (M,)
    """
    if x_grid is None:
        if ts.x_grid is None:
            raise ValueError("x_grid is required when the snapshot does not carry one")
        x_grid = ts.x_grid
    op = volterra_operator(k, x_grid)
    w = np.asarray(ts.theta, dtype=float).copy()
    X = np.asarray(ts.X, dtype=float)
    rho = np.asarray(ts.rho, dtype=float)
    known = np.einsum("ijl,il->j", op.WK, w) + op.gamma @ X
    z = _march(op, rho + known)
    for _ in range(max_iter):
        resid = rho - (z - op.WN @ z - known)
        delta = _march(op, resid)
        z = z + delta
        if np.abs(delta).max() <= tol * max(1.0, np.abs(z).max()):
            return w, z
    raise ConvergenceError(f"transform inversion did not settle in {max_iter} refinements")


def control_input(s: StateSnapshot, k, R_used, reflection_point="x1") -> float:
    """Boundary input that zeroes ``rho(1)``.

    The quadrature of ``int N(1, xi) z dxi`` contains the endpoint value
    ``z(1)``, which the control itself sets to ``R w(p) + U``.  That
    endpoint term is solved for implicitly, so the value ``s.z[-1]`` is
    not used and ``rho(1) = 0`` holds to rounding once the boundary
    condition is applied.

    Parameters
    ----------
    s : StateSnapshot
    k : KernelGrid or VolterraOperator
        Solver or operator-inferred kernels (same formula for both).
    R_used : array_like, shape (1, 3)
        Reflection row in the controller.
    reflection_point : {"x0", "x1"}
        Where ``w`` is read in the reflection term.
    """
    if reflection_point not in REFLECTION_POINTS:
        raise ValueError(f"reflection_point must be one of {REFLECTION_POINTS}")
    op = volterra_operator(k, s.x_grid)
    R = np.ravel(R_used)
    rw = float(R @ (s.w[:, 0] if reflection_point == "x0" else s.w[:, -1]))
    last = op.m - 1
    wn_end = op.WN[last, last]
    partial = (
        op.WK[:, last, :].ravel() @ s.w.ravel()
        + op.WN[last, :last] @ s.z[:last]
        + op.gamma[last] @ s.X
    )
    # U = -rw + partial + wn_end (rw + U)
    return float((partial - rw + wn_end * rw) / (1.0 - wn_end))
