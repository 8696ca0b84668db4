"""First-order upwind simulation of the switching hyperbolic PDE-ODE plant.

    w_t = -Lp(t) w_x + Spp(t) w + Spm(t) z        (rightward, 3 states)
    z_t =  Lm(t) z_x + Smp(t) w + Smm(t) z        (leftward)
    X'  = A X + B z(0)
    w(0) = Q(t) z(0) + C X,     z(1) = R(t) w(p) + U

Coefficients follow a Markov path, frozen on each time step at its left
endpoint.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernel_solver import KernelGrid
from .markov import MarkovPath, modes_sequence, sample_path
from .params import ScenarioConfig
from .transform import REFLECTION_POINTS, StateSnapshot, trapezoid_norm2, volterra_operator

__all__ = [
    "SimGrid",
    "Trajectory",
    "ZeroController",
    "KernelController",
    "EnsembleResult",
    "simulate",
    "run_ensemble",
    "write_trajectory_csv",
    "write_state_csvs",
]

BLOWUP = 1e12


@dataclass(frozen=True)
class SimGrid:
    """Space-time grid: ``Nx`` cells, time step ``dt`` reaching ``T`` exactly."""

    Nx: int
    dt: float
    cfl: float
    T: float

    @property
    def h(self):
        return 1.0 / self.Nx

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def x(self):
        return np.linspace(0.0, 1.0, self.Nx + 1)

    @classmethod
    def for_scenario(cls, cfg: ScenarioConfig):
        """``dt = cfl h / v_max`` over all modes, shrunk so an integer number of steps reaches ``T``."""
        g = cfg.grid
        if not 0.0 < g.cfl <= 1.0:
            raise ValueError("cfl must lie in (0, 1]")
        vmax = max(max(float(np.max(m.lambda_plus)), m.lambda_minus) for m in cfg.markov.modes)
        vmax = max(vmax, float(np.max(cfg.nominal.lambda_plus)), cfg.nominal.lambda_minus)
        bound = g.cfl / g.nx / vmax
        steps = math.ceil(g.t_end / bound - 1e-9)
        return cls(Nx=int(g.nx), dt=g.t_end / steps, cfl=g.cfl, T=g.t_end)

    def check(self, speeds):
        if self.dt * max(speeds) / self.h > 1.0 + 1e-12:
            raise ValueError(f"time step {self.dt:.4g} violates the CFL bound for speed {max(speeds):.4g}")


@dataclass
class Trajectory:
    """Decimated record of one run.

    ``p_series[k] = int (|w|^2 + z^2) dx + |X|^2`` of ``snapshots[k]``.
    ``blown_up`` marks runs stopped once a value exceeded ``1e12``.
    """

    times: np.ndarray
    p_series: np.ndarray
    u_series: np.ndarray
    mode_series: np.ndarray
    X_series: np.ndarray
    snapshots: list = field(default_factory=list)
    blown_up: bool = False
    grid: SimGrid | None = None


class ZeroController:
    """Open loop: ``U = 0``."""

    def prepare(self, x_grid):
        return lambda w, z, X: 0.0


class KernelController:
    """Backstepping boundary control from a kernel grid (solver or operator).

    ``R_used`` defaults to the reflection row of the kernels' nominal
    parameters.  The per-step evaluation is the same arithmetic as
    :func:`mjbackstep.transform.control_input`.
    """

    def __init__(self, grid: KernelGrid, reflection_point="x1", R_used=None):
        if reflection_point not in REFLECTION_POINTS:
            raise ValueError(f"reflection_point must be one of {REFLECTION_POINTS}")
        self.grid = grid
        self.reflection_point = reflection_point
        self.R_used = np.ravel(grid.nominal.R if R_used is None else R_used).astype(float)

    def prepare(self, x_grid):
        op = volterra_operator(self.grid, x_grid)
        last = op.m - 1
        kw = op.WK[:, last, :].copy()
        kn = op.WN[last, :last].copy()
        kg = op.gamma[last].copy()
        end = op.WN[last, last]
        R = self.R_used
        col = 0 if self.reflection_point == "x0" else -1

        def control(w, z, X):
            rw = float(R @ w[:, col])
            partial = float(np.sum(kw * w) + kn @ z[:-1] + kg @ X)
            return (partial - rw + end * rw) / (1.0 - end)

        return control


def _rk4_matrices(A, B, dt):
    """``X(t+dt) = Phi X + Gam v`` for ``X' = A X + B v`` with ``v`` frozen (one RK4 step)."""
    I = np.eye(A.shape[0])
    hA = dt * A
    Phi = I + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24
    Gam = dt * (I + hA / 2 + hA @ hA / 6 + hA @ hA @ hA / 24) @ B
    return Phi, Gam.ravel()


def _p_value(w, z, X, h):
    return trapezoid_norm2(w, h) + trapezoid_norm2(z, h) + float(X @ X)


def simulate(cfg: ScenarioConfig, path: MarkovPath, controller=None, keep_states=True,
             reflection_point=None, check_boundary=None) -> Trajectory:
    """Integrate one closed-loop trajectory.

    Each step: upwind update of the interior (backward differences for
    ``w``, forward for ``z``) with explicit coupling sources; RK4 update of
    ``X`` with ``z(0)`` frozen at the step start; then the boundaries on
    the updated state, ``w(0) = Q z(0) + C X`` first (it does not involve
    ``z(1)``), then ``U`` from the controller and ``z(1) = R w(p) + U``.

    Parameters
    ----------
    cfg : ScenarioConfig
    path : MarkovPath
        Must cover ``[0, T]``.
    controller : ZeroController or KernelController, optional
        Defaults to open loop.
    keep_states : bool
        Store decimated :class:`StateSnapshot` objects.
    reflection_point : {"x0", "x1"}, optional
        Plant reflection point; defaults to ``cfg.reflection_point``.
    check_boundary : callable, optional
        Called as ``check_boundary(step, w, z, X)`` after every step.
    """
    controller = controller or ZeroController()
    rp = reflection_point or cfg.reflection_point
    if rp not in REFLECTION_POINTS:
        raise ValueError(f"reflection_point must be one of {REFLECTION_POINTS}")
    grid = SimGrid.for_scenario(cfg)
    if path.horizon < grid.T - 1e-12:
        raise ValueError(f"path horizon {path.horizon} shorter than T={grid.T}")
    modes = cfg.markov.modes
    grid.check([max(float(np.max(m.lambda_plus)), m.lambda_minus) for m in modes])

    x = grid.x
    h, dt, steps = grid.h, grid.dt, grid.n_steps
    w, z, X = cfg.init.sample(x)
    w = np.array(w, dtype=float)
    z = np.array(z, dtype=float)
    X = np.array(X, dtype=float)
    Phi, Gam = _rk4_matrices(cfg.ode.A, cfg.ode.B, dt)
    C = cfg.ode.C
    col = 0 if rp == "x0" else -1
    control = controller.prepare(x)

    coeffs = []
    for m in modes:
        coeffs.append((
            (m.lambda_plus * dt / h)[:, None], m.lambda_minus * dt / h,
            dt * m.sigma_pp, dt * m.sigma_pm.ravel()[:, None],
            dt * m.sigma_mp.ravel(), dt * m.sigma_mm, m.Q.ravel(), m.R.ravel(),
        ))

    stride = max(1, math.ceil((steps + 1) / cfg.grid.max_snapshots))
    rec_steps = list(range(0, steps + 1, stride))
    if rec_steps[-1] != steps:
        rec_steps.append(steps)
    rec_set = set(rec_steps)
    step_modes = modes_sequence(path, np.arange(steps + 1) * dt)

    times, ps, us, ms, Xs, snaps = [], [], [], [], [], []

    def record(k, u):
        times.append(k * dt)
        ps.append(_p_value(w, z, X, h))
        us.append(u)
        ms.append(int(step_modes[k]))
        Xs.append(X.copy())
        if keep_states:
            snaps.append(StateSnapshot(x, w.copy(), z.copy(), X.copy(), k * dt, int(step_modes[k])))

    record(0, control(w, z, X))
    blown = False
    for k in range(steps):
        cw, cz, spp, spm, smp, smm, Q, R = coeffs[step_modes[k]]
        w_new = np.empty_like(w)
        z_new = np.empty_like(z)
        w_new[:, 1:] = w[:, 1:] - cw * (w[:, 1:] - w[:, :-1]) + spp @ w[:, 1:] + spm * z[1:]
        z_new[:-1] = z[:-1] + cz * (z[1:] - z[:-1]) + smp @ w[:, :-1] + smm * z[:-1]
        X = Phi @ X + Gam * z[0]
        w_new[:, 0] = Q * z_new[0] + C @ X
        u = control(w_new, z_new, X)
        z_new[-1] = R @ w_new[:, col] + u
        w, z = w_new, z_new
        if check_boundary is not None:
            check_boundary(k + 1, w, z, X)
        if not (np.abs(w).max() < BLOWUP and np.abs(z).max() < BLOWUP and np.abs(X).max() < BLOWUP):
            blown = True
            record(k + 1, u)
            break
        if k + 1 in rec_set:
            record(k + 1, u)

    return Trajectory(
        times=np.array(times), p_series=np.array(ps), u_series=np.array(us),
        mode_series=np.array(ms, dtype=int), X_series=np.array(Xs), snapshots=snaps,
        blown_up=blown, grid=grid,
    )


@dataclass
class EnsembleResult:
    """Trajectories of an ensemble and the mean ``E[p(t)]`` on the shared time samples.

    A trajectory that blew up contributes ``inf`` after its last sample.
    """

    trajectories: list
    times: np.ndarray
    mean_p: np.ndarray
    paths: list

    @property
    def n_blown_up(self):
        return sum(t.blown_up for t in self.trajectories)


def _one(cfg, child, controller, keep_states):
    path = sample_path(cfg.markov, cfg.grid.t_end, np.random.default_rng(child))
    return path, simulate(cfg, path, controller, keep_states)


def run_ensemble(cfg: ScenarioConfig, controller, n_paths: int, seed: int, keep_states=True, n_jobs=1):
    """Simulate ``n_paths`` independently sampled Markov paths.

    Path seeds are spawned from ``seed``; results and the mean are in
    path order regardless of ``n_jobs``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    children = np.random.SeedSequence(seed).spawn(n_paths)
    if n_jobs == 1:
        out = [_one(cfg, c, controller, keep_states) for c in children]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=n_jobs)(delayed(_one)(cfg, c, controller, keep_states) for c in children)
    paths = [o[0] for o in out]
    trajs = [o[1] for o in out]
    longest = max(trajs, key=lambda t: t.times.size)
    times = longest.times
    stack = np.full((n_paths, times.size), np.inf)
    for k, t in enumerate(trajs):
        stack[k, :t.p_series.size] = t.p_series
        if t.blown_up:
            stack[k, t.p_series.size - 1:] = np.inf
    mean_p = np.zeros(times.size)
    for row in stack:  # fixed summation order
        mean_p += row
    return EnsembleResult(trajs, times, mean_p / n_paths, paths)


def write_trajectory_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "p", "u", "mode", "X1", "X2"])
        for t, p, u, m, X in zip(traj.times, traj.p_series, traj.u_series, traj.mode_series, traj.X_series):
            wr.writerow([repr(float(t)), repr(float(p)), repr(float(u)), int(m), repr(float(X[0])), repr(float(X[1]))])


def write_state_csvs(traj: Trajectory, directory, every=1):
    """Write ``state_<k>.csv`` (columns ``x,w1,w2,w3,z``) for every ``every``-th snapshot."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for k, s in enumerate(traj.snapshots[::every]):
        target = directory / f"state_{k}.csv"
        data = np.column_stack([s.x_grid, s.w.T, s.z])
        np.savetxt(target, data, delimiter=",", header="x,w1,w2,w3,z", comments="", fmt="%.17g")
        written.append(target)
    return written
