import csv
from dataclasses import replace

import numpy as np
import pytest

from mjbackstep.kernel_solver import solve_kernels
from mjbackstep.markov import ConstantRates, MarkovChainSpec, MarkovPath, sample_path
from mjbackstep.params import GridSpec, InitialConditions, OdeMatrices, Profile
from mjbackstep.simulator import (
    KernelController,
    SimGrid,
    ZeroController,
    run_ensemble,
    simulate,
    write_state_csvs,
    write_trajectory_csv,
)
from mjbackstep.transform import control_input, trapezoid_norm2


def single_mode(cfg, p, grid):
    chain = MarkovChainSpec(modes=(p,), rates=ConstantRates([[0.0]]))
    return replace(cfg, nominal=p, markov=chain, grid=grid)


@pytest.fixture(scope="module")
def short_grid(short_cfg):
    return solve_kernels(short_cfg.nominal, short_cfg.ode, short_cfg.grid.nx)


def test_dt_respects_cfl(cfg):
    g = SimGrid.for_scenario(cfg)
    vmax = max(max(m.lambda_plus.max(), m.lambda_minus) for m in cfg.markov.modes)
    assert g.dt * vmax / g.h <= cfg.grid.cfl + 1e-12
    assert abs(g.n_steps * g.dt - cfg.grid.t_end) < 1e-9
    with pytest.raises(ValueError, match="CFL"):
        replace(g, dt=2 * g.h).check([vmax])


def test_zero_data_stays_zero(short_cfg, short_grid):
    init = InitialConditions(Profile("zero", 3), Profile("zero", 1), [0.0, 0.0])
    cfg = replace(short_cfg, init=init)
    path = sample_path(cfg.markov, cfg.grid.t_end, 1)
    for ctrl in (ZeroController(), KernelController(short_grid)):
        tr = simulate(cfg, path, ctrl)
        assert np.all(tr.p_series == 0) and np.all(tr.u_series == 0)


def test_pure_transport_exits(cfg):
    p = replace(cfg.nominal, sigma_pp=np.zeros((3, 3)), sigma_pm=np.zeros((3, 1)), sigma_mp=np.zeros((1, 3)),
                sigma_mm=0.0, Q=np.zeros((3, 1)), R=np.zeros((1, 3)))
    ode = OdeMatrices(cfg.ode.A, np.zeros((2, 1)), np.zeros((3, 2)), cfg.ode.K)
    init = InitialConditions(Profile("sine", 3, amplitude=np.ones(3), frequency=1.0),
                             Profile("linear", 1, slope=np.ones(1)), [0.0, 0.0])
    slowest = min(p.lambda_plus.min(), p.lambda_minus)
    sc = replace(single_mode(cfg, p, GridSpec(nx=400, cfl=0.5, t_end=1.0 / slowest + 1.0, max_snapshots=100)),
                 ode=ode, init=init)
    tr = simulate(sc, MarkovPath.constant(0, sc.grid.t_end))
    s = tr.snapshots[-1]
    residue = np.sqrt(trapezoid_norm2(s.w, s.h)) + np.sqrt(trapezoid_norm2(s.z, s.h))
    assert residue <= 1e-3


def test_p_series_matches_snapshots(short_cfg, short_grid):
    tr = simulate(short_cfg, sample_path(short_cfg.markov, 2.0, 4), KernelController(short_grid))
    assert len(tr.snapshots) == tr.times.size <= short_cfg.grid.max_snapshots + 1
    for p, s in zip(tr.p_series, tr.snapshots):
        h = s.x_grid[1] - s.x_grid[0]
        f = np.sum(s.w**2, axis=0) + s.z**2
        assert abs(p - (h * (f[1:-1].sum() + 0.5 * (f[0] + f[-1])) + s.X @ s.X)) <= 1e-12 * max(1.0, p)


def test_recorded_control_matches_transform_module(short_cfg, short_grid):
    tr = simulate(short_cfg, MarkovPath.constant(1, 2.0), KernelController(short_grid))
    for k in (1, 10, len(tr.snapshots) - 1):
        s = tr.snapshots[k]
        assert abs(tr.u_series[k] - control_input(s, short_grid, short_grid.nominal.R)) <= 1e-12


def test_determinism(short_cfg, short_grid):
    path = sample_path(short_cfg.markov, 2.0, 9)
    a = simulate(short_cfg, path, KernelController(short_grid), keep_states=False)
    b = simulate(short_cfg, path, KernelController(short_grid), keep_states=False)
    assert np.array_equal(a.p_series, b.p_series) and np.array_equal(a.mode_series, b.mode_series)


def test_mode_series_follows_path(short_cfg):
    path = MarkovPath((0.0, 0.5, 1.2), (1, 3, 0), 2.0)
    tr = simulate(short_cfg, path, keep_states=False)
    assert tr.mode_series[0] == 1
    assert set(tr.mode_series[(tr.times > 0.6) & (tr.times < 1.1)]) == {3}
    assert tr.mode_series[-1] == 0


def test_blow_up_is_flagged(short_cfg):
    cfg = replace(short_cfg, grid=replace(short_cfg.grid, t_end=60.0))
    tr = simulate(cfg, MarkovPath.constant(1, 60.0), keep_states=False)
    assert tr.blown_up and tr.times[-1] < 60.0
    res = run_ensemble(cfg, ZeroController(), 2, seed=0, keep_states=False)
    assert res.n_blown_up == 2 and np.isinf(res.mean_p[-1])


def test_short_path_rejected(short_cfg):
    with pytest.raises(ValueError, match="horizon"):
        simulate(short_cfg, MarkovPath.constant(0, 1.0))


def test_single_path_ensemble(short_cfg, short_grid):
    res = run_ensemble(short_cfg, KernelController(short_grid), 1, seed=3, keep_states=False)
    tr = simulate(short_cfg, res.paths[0], KernelController(short_grid), keep_states=False)
    np.testing.assert_array_equal(res.mean_p, tr.p_series)


def test_ensemble_parallel_matches_serial(short_cfg, short_grid):
    a = run_ensemble(short_cfg, KernelController(short_grid), 3, seed=5, keep_states=False)
    b = run_ensemble(short_cfg, KernelController(short_grid), 3, seed=5, keep_states=False, n_jobs=2)
    np.testing.assert_array_equal(a.mean_p, b.mean_p)


def test_first_order_refinement(cfg):
    p = cfg.nominal
    vals = []
    for nx in (50, 100, 200, 400):
        sc = single_mode(cfg, p, GridSpec(nx=nx, cfl=0.5, t_end=1.0, max_snapshots=10))
        vals.append(simulate(sc, MarkovPath.constant(0, 1.0), keep_states=False).p_series[-1])
    inc = np.abs(np.diff(vals))
    assert np.all(inc[1:] <= 0.7 * inc[:-1])


def test_csv_exports(tmp_path, short_cfg, short_grid):
    tr = simulate(short_cfg, MarkovPath.constant(1, 2.0), KernelController(short_grid))
    write_trajectory_csv(tr, tmp_path / "traj.csv")
    with open(tmp_path / "traj.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "p", "u", "mode", "X1", "X2"] and len(rows) == tr.times.size + 1
    files = write_state_csvs(tr, tmp_path / "states", every=10)
    data = np.loadtxt(files[0], delimiter=",", skiprows=1)
    assert open(files[0]).readline().strip() == "x,w1,w2,w3,z"
    assert data.shape == (short_cfg.grid.nx + 1, 5)
