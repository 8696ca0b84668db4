"""Backstepping kernels on the triangle ``0 <= xi <= x <= 1``.

The kernels ``K`` (1x3), ``N`` (scalar) and ``gamma`` (1x2) satisfy

    Lm K_x = K_xi Lp + N Smp + K (Spp - Smm I)
    Lm (N_x + N_xi) = K Spm
    K(x, x) (Lm I + Lp) = -Smp
    Lm N(x, 0) = K(x, 0) Lp Q + gamma(x) B
    Lm gamma' = gamma (A - Smm I) + K(x, 0) Lp C,     gamma(0) = K_gain

(``Lp`` = diag(lambda_plus), ``Lm`` = lambda_minus).  They are solved by
successive approximation: each sweep transports ``K`` from the diagonal
along its characteristics, integrates ``gamma`` by RK4 and transports
``N`` from the ``xi = 0`` edge, with coupling sources lagged one sweep.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConvergenceError, DivergenceError, DomainError, SchemaError
from .params import ModeParams, OdeMatrices

__all__ = [
    "TriMesh",
    "KernelGrid",
    "ResidualReport",
    "solve_kernels",
    "kernel_residual",
    "evaluate_kernels",
    "diagonal_values",
    "save_grid",
    "load_grid",
    "grid_to_dict",
    "grid_from_dict",
]


@dataclass(frozen=True)
class TriMesh:
    """Uniform nodes ``(a h, b h)`` with ``0 <= b <= a <= n``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("mesh size n must be a positive integer")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def size(self):
        return (self.n + 1) * (self.n + 2) // 2

    @property
    def axis(self):
        return np.linspace(0.0, 1.0, self.n + 1)

    def indices(self):
        """Row-by-row (x-index major) node indices ``(a, b)``."""
        return np.tril_indices(self.n + 1)

    def nodes(self):
        a, b = self.indices()
        return a * self.h, b * self.h

    def pack(self, square):
        return np.asarray(square)[..., self.indices()[0], self.indices()[1]]

    def unpack(self, packed):
        packed = np.asarray(packed, dtype=float)
        out = np.zeros(packed.shape[:-1] + (self.n + 1, self.n + 1))
        a, b = self.indices()
        out[..., a, b] = packed
        return out


@dataclass
class ResidualReport:
    """Max-abs discrete residuals of the five kernel relations."""

    bc_diag: float
    bc_xi0: float
    ode_gamma: float
    pde_K: float
    pde_N: float

    def passes(self, diag_tol=1e-12, xi0_tol=1e-8):
        return self.bc_diag <= diag_tol and self.bc_xi0 <= xi0_tol

    def to_dict(self):
        return asdict(self)


@dataclass
class KernelGrid:
    """Kernel values on a :class:`TriMesh`.

    ``K`` has shape (3, n+1, n+1) and ``N`` shape (n+1, n+1); only the
    lower triangle ``b <= a`` is meaningful, the rest is zero.  ``gamma``
    has shape (2, n+1).  ``source`` is ``"solver"`` or ``"operator"``.
    """

    mesh: TriMesh
    K: np.ndarray
    N: np.ndarray
    gamma: np.ndarray
    nominal: ModeParams
    gain: np.ndarray
    source: str = "solver"
    residuals: ResidualReport | None = None
    info: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return self.mesh.n

    def sup_norm(self):
        return float(max(np.abs(self.K).max(), np.abs(self.N).max(), np.abs(self.gamma).max()))

    def validate(self, cap=1e6, diag_tol=1e-12):
        """Check the grid invariants.

        Solver grids raise on violation.  Operator grids only guarantee
        closeness to the true kernels, so violations become warnings.
        """
        problems = []
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.N)) and np.all(np.isfinite(self.gamma))):
            problems.append("non-finite kernel values")
        elif self.sup_norm() > cap:
            problems.append(f"sup norm {self.sup_norm():.3g} exceeds cap {cap:.3g}")
        d = diagonal_values(self.nominal)
        diag = np.einsum("cii->ic", self.K)
        err = float(np.abs(diag - d).max())
        if err > diag_tol:
            problems.append(f"diagonal condition violated by {err:.3g}")
        g0 = float(np.abs(self.gamma[:, 0] - np.ravel(self.gain)).max())
        if g0 > diag_tol:
            problems.append(f"gamma(0) differs from the gain by {g0:.3g}")
        if problems:
            msg = "; ".join(problems)
            if self.source == "solver":
                raise DivergenceError(msg)
            warnings.warn(f"operator kernel grid: {msg}", RuntimeWarning, stacklevel=2)
        return self


def diagonal_values(p: ModeParams):
    """``K(x, x) = -Smp (Lm I + Lp)^-1`` (the same at every x)."""
    return -np.ravel(p.sigma_mp) / (p.lambda_minus + p.lambda_plus)


def _gamma_rk4(gamma0, M, forcing, h, lam_minus):
    """RK4 for ``gamma' = gamma M + f(x)`` with ``f`` sampled at nodes and midpoints."""
    f_nodes, f_mid = forcing
    n = f_nodes.shape[0] - 1
    out = np.empty((n + 1, 2))
    g = np.asarray(gamma0, dtype=float).copy()
    out[0] = g
    for a in range(n):
        f0, fm, f1 = f_nodes[a], f_mid[a], f_nodes[a + 1]
        k1 = g @ M + f0
        k2 = (g + 0.5 * h * k1) @ M + fm
        k3 = (g + 0.5 * h * k2) @ M + fm
        k4 = (g + h * k3) @ M + f1
        g = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[a + 1] = g
    return out.T


def _check_cap(arrays, cap, sweep, h):
    for name, arr in arrays:
        bad = ~np.isfinite(arr) | (np.abs(arr) > cap)
        if np.any(bad):
            idx = np.unravel_index(int(np.argmax(bad)), arr.shape)
            a, b = idx[-2:] if arr.ndim >= 2 else (idx[-1], 0)
            raise DivergenceError(
                f"{name} left the admissible range at node (x={a * h:.4g}, xi={b * h:.4g}) "
                f"in sweep {sweep}: value {arr[idx]}"
            )


def solve_kernels(
    nominal: ModeParams,
    ode: OdeMatrices,
    n: int,
    tol: float = 1e-10,
    max_sweeps: int = 200,
    cap: float = 1e6,
) -> KernelGrid:
    """Solve the kernel equations on an ``n``-cell triangular mesh.

    Parameters
    ----------
    nominal : ModeParams
        Nominal coefficients.
    ode : OdeMatrices
        ODE block and gain; ``gamma(0)`` is pinned to ``ode.K``.
    n : int
        Cells per side, ``n >= 4``.
    tol, max_sweeps, cap
        Stop when the sup-norm change between sweeps drops below ``tol``;
        give up after ``max_sweeps``; abort once any value exceeds ``cap``.

    Returns
    -------
    KernelGrid
        Converged kernels with ``info["history"]`` holding the per-sweep
        sup-norm changes and ``residuals`` filled in.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_sweeps``.
    DivergenceError
        A value became non-finite or exceeded ``cap``.
    """
    if int(n) != n or n < 4:
        raise ValueError("n >= 4 required")
    n = int(n)
    mesh = TriMesh(n)
    h = mesh.h
    t_start = time.perf_counter()

    lam = np.asarray(nominal.lambda_plus, dtype=float)
    lm = float(nominal.lambda_minus)
    if lm <= 0 or np.any(lam <= 0):
        raise ValueError("transport speeds must be positive")
    s_mp = np.ravel(nominal.sigma_mp)
    s_pm = np.ravel(nominal.sigma_pm)
    M_pp = np.asarray(nominal.sigma_pp) - nominal.sigma_mm * np.eye(3)
    LpQ = lam * np.ravel(nominal.Q)
    LpC = lam[:, None] * ode.C
    B = np.ravel(ode.B)
    gain = np.ravel(ode.K)
    M_gamma = (ode.A - nominal.sigma_mm * np.eye(2)) / lm
    diag = diagonal_values(nominal)

    mu = lam / lm
    m_int = np.floor(mu + 1e-12).astype(int)
    theta = mu - m_int
    theta[theta < 1e-12] = 0.0

    K = np.zeros((3, n + 1, n + 1))
    N = np.zeros((n + 1, n + 1))
    gamma = np.tile(gain[:, None], (1, n + 1))
    history = []
    bidx = np.arange(n + 1)

    for sweep in range(1, max_sweeps + 1):
        K_old, N_old, g_old = K, N, gamma

        # (a) K from the diagonal along d(xi)/dx = -mu_i, sources lagged.
        src = np.einsum("ab,i->iab", N_old, s_mp) + np.einsum("kab,ki->iab", K_old, M_pp)
        K = np.zeros_like(K_old)
        for i in range(3):
            Ki, Si = K[i], src[i]
            Ki[0, 0] = diag[i]
            mi, th = m_int[i], theta[i]
            for a in range(1, n + 1):
                prev = Ki[a - 1]
                b_reg = int(np.floor(a - 1 - mu[i] + 1e-12))
                if b_reg >= 0:
                    r = b_reg + 1
                    foot = (1.0 - th) * prev[mi:mi + r]
                    if th:
                        foot = foot + th * prev[mi + 1:mi + 1 + r]
                    Ki[a, :r] = foot + (h / lm) * Si[a, :r]
                else:
                    r = 0
                bs = bidx[r:a]
                Ki[a, r:a] = diag[i] + ((a - bs) * h / (1.0 + mu[i]) / lm) * Si[a, r:a]
                Ki[a, a] = diag[i]

        # (b) gamma by RK4 with the current K(x, 0); midpoints interpolated.
        k_edge = K[:, :, 0].T
        f_nodes = (k_edge @ LpC) / lm
        f_mid = 0.5 * (f_nodes[:-1] + f_nodes[1:])
        gamma = _gamma_rk4(gain, M_gamma, (f_nodes, f_mid), h, lm)

        # (c) N from the xi = 0 edge along d(xi)/dx = +1.
        S = np.einsum("iab,i->ab", K, s_pm)
        N = np.zeros_like(N_old)
        N[:, 0] = (k_edge @ LpQ + gamma.T @ B) / lm
        half = 0.5 * h / lm
        for a in range(1, n + 1):
            N[a, 1:a + 1] = N[a - 1, 0:a] + half * (S[a, 1:a + 1] + S[a - 1, 0:a])

        _check_cap((("K", K), ("N", N), ("gamma", gamma)), cap, sweep, h)
        change = float(max(np.abs(K - K_old).max(), np.abs(N - N_old).max(), np.abs(gamma - g_old).max()))
        history.append(change)
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"kernel iteration did not converge in {max_sweeps} sweeps (last change {history[-1]:.3g})"
        )

    grid = KernelGrid(
        mesh=mesh, K=K, N=N, gamma=gamma, nominal=nominal, gain=np.array(ode.K, dtype=float),
        source="solver",
        info={"history": history, "sweeps": len(history), "seconds": time.perf_counter() - t_start,
              "A": ode.A.tolist(), "B": ode.B.ravel().tolist(), "C": ode.C.tolist()},
    )
    grid.residuals = kernel_residual(grid, ode)
    return grid


def kernel_residual(grid: KernelGrid, ode: OdeMatrices | None = None) -> ResidualReport:
    """Discrete residuals of the five kernel relations.

    Interior derivatives use one-sided first-order differences: backward
    in ``x`` and forward in ``xi`` for ``K``, backward in both for ``N``,
    backward for ``gamma'``.  Boundary relations are evaluated at their
    nodes.  ``ode`` defaults to the matrices recorded by the solver.
    """
    p = grid.nominal
    n, h = grid.n, grid.mesh.h
    if ode is None:
        info = grid.info
        A = np.asarray(info["A"])
        B = np.asarray(info["B"])
        C = np.asarray(info["C"])
    else:
        A, B, C = ode.A, np.ravel(ode.B), ode.C
    lam = np.asarray(p.lambda_plus)
    lm = p.lambda_minus
    s_mp, s_pm = np.ravel(p.sigma_mp), np.ravel(p.sigma_pm)
    M_pp = np.asarray(p.sigma_pp) - p.sigma_mm * np.eye(3)
    K, N, g = grid.K, grid.N, grid.gamma

    diag = np.einsum("cii->ic", K)
    bc_diag = float(np.abs(diag * (lm + lam) + s_mp).max())
    k_edge = K[:, :, 0].T
    bc_xi0 = float(np.abs(lm * N[:, 0] - k_edge @ (lam * np.ravel(p.Q)) - g.T @ B).max())

    if n < 2:
        return ResidualReport(bc_diag, bc_xi0, 0.0, 0.0, 0.0)

    dg = lm * (g[:, 1:] - g[:, :-1]).T / h
    rhs = g[:, 1:].T @ (A - p.sigma_mm * np.eye(2)) + k_edge[1:] @ (lam[:, None] * C)
    ode_gamma = float(np.abs(dg - rhs).max())

    a, b = np.tril_indices(n + 1, -1)  # b <= a - 1
    Kx = (K[:, a, b] - K[:, a - 1, b]) / h
    Kxi = (K[:, a, b + 1] - K[:, a, b]) / h
    srcK = N[a, b][None, :] * s_mp[:, None] + np.einsum("kj,ki->ij", K[:, a, b], M_pp)
    pde_K = float(np.abs(lm * Kx - lam[:, None] * Kxi - srcK).max())

    keep = b >= 1
    a2, b2 = a[keep], b[keep]
    if a2.size:
        Nx = (N[a2, b2] - N[a2 - 1, b2]) / h
        Nxi = (N[a2, b2] - N[a2, b2 - 1]) / h
        pde_N = float(np.abs(lm * (Nx + Nxi) - s_pm @ K[:, a2, b2]).max())
    else:
        pde_N = 0.0
    return ResidualReport(bc_diag, bc_xi0, ode_gamma, pde_K, pde_N)


def evaluate_kernels(grid: KernelGrid, x, xi):
    """Interpolate the kernels at points of the triangle.

    Bilinear on cells strictly below the diagonal, linear on the
    half-cells touching it (so values on ``xi = x`` come from diagonal
    nodes only).  Exact at nodes.

    Returns
    -------
    K : ndarray, shape (..., 3)
    N : ndarray, shape (...)
    gamma : ndarray, shape (..., 2)
        ``gamma`` is interpolated in ``x`` only.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x, xi = np.broadcast_arrays(x, xi)
    eps = 1e-12
    if np.any(x < -eps) or np.any(x > 1 + eps) or np.any(xi < -eps) or np.any(xi > x + eps):
        raise DomainError("query outside the triangle 0 <= xi <= x <= 1")
    n = grid.n
    u = np.clip(x, 0.0, 1.0) * n
    v = np.minimum(np.clip(xi, 0.0, 1.0) * n, u)
    a = np.minimum(np.floor(u).astype(int), n - 1)
    b = np.minimum(np.floor(v).astype(int), a)
    s = u - a
    t = v - b
    fields_ = np.concatenate([grid.K, grid.N[None]], axis=0)
    on_diag = b == a
    b1 = np.minimum(b + 1, n)
    f00 = fields_[:, a, b]
    f10 = fields_[:, a + 1, b]
    f11 = fields_[:, a + 1, b1]
    f01 = fields_[:, a, np.where(on_diag, b, b1)]
    bil = (1 - s) * (1 - t) * f00 + s * (1 - t) * f10 + (1 - s) * t * f01 + s * t * f11
    tri = (1 - s) * f00 + (s - t) * f10 + t * f11
    vals = np.where(on_diag, tri, bil)
    g = np.stack([np.interp(np.clip(x, 0, 1), grid.mesh.axis, gc) for gc in grid.gamma], axis=-1)
    return np.moveaxis(vals[:3], 0, -1), vals[3], g


def grid_to_dict(grid: KernelGrid):
    mesh = grid.mesh
    return {
        "n": grid.n,
        "nominal": grid.nominal.to_dict(),
        "gain": np.ravel(grid.gain).tolist(),
        "source": grid.source,
        "K": [mesh.pack(grid.K[i]).tolist() for i in range(3)],
        "N": mesh.pack(grid.N).tolist(),
        "gamma": [grid.gamma[i].tolist() for i in range(2)],
        "residuals": None if grid.residuals is None else grid.residuals.to_dict(),
        "ode": {k: grid.info[k] for k in ("A", "B", "C") if k in grid.info},
    }


def grid_from_dict(d):
    try:
        n = int(d["n"])
        mesh = TriMesh(n)
        K = np.stack([mesh.unpack(np.asarray(k, dtype=float)) for k in d["K"]])
        N = mesh.unpack(np.asarray(d["N"], dtype=float))
        gamma = np.asarray(d["gamma"], dtype=float)
        if K.shape != (3, n + 1, n + 1) or len(d["N"]) != mesh.size or gamma.shape != (2, n + 1):
            raise SchemaError("array sizes do not match n")
        if any(len(k) != mesh.size for k in d["K"]):
            raise SchemaError("triangular arrays have the wrong length")
        res = d.get("residuals")
        info = dict(d.get("ode", {}))
        return KernelGrid(
            mesh=mesh, K=K, N=N, gamma=gamma,
            nominal=ModeParams.from_dict(d["nominal"]),
            gain=np.asarray(d["gain"], dtype=float).reshape(1, 2),
            source=d.get("source", "solver"),
            residuals=None if res is None else ResidualReport(**res),
            info=info,
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed kernel grid: {exc}") from None


def save_grid(grid: KernelGrid, path):
    Path(path).write_text(json.dumps(grid_to_dict(grid)))


def load_grid(path) -> KernelGrid:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return grid_from_dict(d)
