import math

import numpy as np
import pytest

from mjbackstep.exceptions import RateBoundError
from mjbackstep.markov import (
    CallableRates,
    ConstantRates,
    FiveStateSchedule,
    MarkovChainSpec,
    MarkovPath,
    TabulatedRates,
    kolmogorov_evolve,
    mode_at,
    modes_sequence,
    path_from_csv,
    path_to_csv,
    sample_modes_at,
    sample_path,
    transition_matrix,
)


def two_state(rate=1.0):
    return MarkovChainSpec((None, None), ConstantRates([[0.0, rate], [rate, 0.0]]))


def test_identity_at_equal_times(cfg):
    np.testing.assert_array_equal(kolmogorov_evolve(cfg.markov, 2, 3.0, 3.0), np.eye(5)[2])


def test_two_state_analytic():
    p = kolmogorov_evolve(two_state(), 0, 0.0, 1.0)
    assert abs(p[0] - (0.5 + 0.5 * math.exp(-2))) <= 1e-10
    assert abs(p[0] - 0.567668) <= 1e-6


def test_rk4_order_on_smooth_rates():
    # tau_12(t) = tau_21(t) = 1 + sin(t): P_11 = 1/2 + 1/2 exp(-2 (t + 1 - cos t))
    spec = MarkovChainSpec((None, None), CallableRates(lambda t: (1 + math.sin(t)) * np.array([[0, 1], [1, 0]]), 2),
                           tau_star=2.0)
    exact = 0.5 + 0.5 * math.exp(-2 * (2.0 + 1 - math.cos(2.0)))
    errs = [abs(kolmogorov_evolve(spec, 0, 0.0, 2.0, dt)[0] - exact) for dt in (0.1, 0.05)]
    assert errs[0] / errs[1] >= 8


def test_five_state_rows_conserved(cfg):
    for t1 in (0.3, 5.0, 40.0):
        P = transition_matrix(cfg.markov, 0.0, t1, dt=1e-3)
        assert np.all((P >= 0) & (P <= 1))
        assert np.abs(P.sum(axis=1) - 1).max() <= 1e-9


def test_schedule_interpretation():
    s = FiveStateSchedule()
    M = s.matrix(0.0)
    assert np.all(np.diag(M) == 0)
    assert np.all(M[0, 1:] == 20) and np.all(M[4, :4] == 20)
    assert M[1, 0] == 1 and M[2, 4] == 1
    assert M[1, 2] == 90.0
    t = 123.4
    c = 1 + 2 * math.cos(1e-3 * (3 + 5 * 4) * t)
    assert abs(s.matrix(t)[2, 3] - 10 * c * c) <= 1e-12
    np.testing.assert_allclose(s.rows([2, 3], [t, t]), s.matrix(t)[[2, 3]], atol=1e-12)
    np.testing.assert_allclose(s.row(3, t), s.matrix(t)[3], atol=1e-12)


def test_single_mode_path(cfg):
    spec = MarkovChainSpec((cfg.nominal,), ConstantRates([[0.0]]))
    path = sample_path(spec, 10.0, seed=1)
    assert path.n_jumps == 0 and mode_at(path, 7.0) == 0


def test_symmetric_occupancy():
    path = sample_path(two_state(), 1000.0, seed=11)
    jt = np.append(path.jump_times, path.horizon)
    in0 = sum(b - a for a, b, m in zip(jt[:-1], jt[1:], path.mode_indices) if m == 0)
    assert abs(in0 / 1000.0 - 0.5) <= 0.05


def test_sampled_modes_match_kolmogorov(cfg):
    n = 10_000
    modes = sample_modes_at(cfg.markov, 5.0, n, seed=3)
    p = kolmogorov_evolve(cfg.markov, cfg.markov.initial_mode, 0.0, 5.0)
    freq = np.bincount(modes, minlength=5) / n
    sd = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) <= 3 * sd + 1e-12)


def test_path_occupancy_matches_kolmogorov(cfg):
    n = 1000
    modes = np.array([mode_at(sample_path(cfg.markov, 1.0, seed=s), 1.0) for s in range(n)])
    p = kolmogorov_evolve(cfg.markov, cfg.markov.initial_mode, 0.0, 1.0)
    freq = np.bincount(modes, minlength=5) / n
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12)


def test_same_seed_same_path(cfg):
    a = sample_path(cfg.markov, 70.0, seed=42)
    b = sample_path(cfg.markov, 70.0, seed=42)
    assert a == b and a.n_jumps > 10
    assert sample_path(cfg.markov, 70.0, seed=43) != a


def test_right_continuity():
    path = MarkovPath((0.0, 1.0, 2.5), (1, 0, 2), 4.0)
    assert mode_at(path, 0.0) == 1
    assert mode_at(path, 1.0) == 0
    assert mode_at(path, 1.7) == 0
    assert mode_at(path, 2.5) == 2
    np.testing.assert_array_equal(modes_sequence(path, [0.0, 1.0, 2.49, 4.0]), [1, 0, 0, 2])
    with pytest.raises(ValueError):
        mode_at(path, 4.5)


def test_path_validation():
    with pytest.raises(ValueError):
        MarkovPath((0.0, 2.0, 1.0), (0, 1, 0), 3.0)
    with pytest.raises(ValueError):
        MarkovPath((0.5,), (0,), 3.0)
    with pytest.raises(ValueError):
        MarkovPath((0.0, 3.0), (0, 1), 3.0)


def test_csv_round_trip(cfg):
    path = sample_path(cfg.markov, 5.0, seed=2)
    text = path_to_csv(path)
    assert text.splitlines()[0] == "t_jump,mode"
    assert path_from_csv(text, 5.0) == path


def test_declared_bound_enforced():
    with pytest.raises(ValueError, match="exceeds tau_star"):
        MarkovChainSpec((None, None), ConstantRates([[0, 3.0], [1.0, 0]]), tau_star=2.0)
    spec = MarkovChainSpec((None, None), CallableRates(lambda t: np.array([[0, 5.0], [5.0, 0]]), 2), tau_star=1.0)
    with pytest.raises(RateBoundError):
        sample_path(spec, 10.0, seed=0)


def test_zero_bound_with_many_modes():
    spec = MarkovChainSpec((None, None), ConstantRates([[0, 0.0], [0.0, 0]]))
    with pytest.raises(RateBoundError):
        sample_path(spec, 1.0, seed=0)


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        ConstantRates([[0, -1.0], [1.0, 0]])
    spec = MarkovChainSpec((None, None), CallableRates(lambda t: np.array([[0, -1.0], [1.0, 0]]), 2), tau_star=1.0)
    with pytest.raises(RateBoundError):
        kolmogorov_evolve(spec, 0, 0.0, 1.0)


def test_tabulated_rates_interpolate():
    r = TabulatedRates([0.0, 2.0], [[[0, 1.0], [1.0, 0]], [[0, 3.0], [3.0, 0]]])
    np.testing.assert_allclose(r.matrix(1.0), [[0, 2.0], [2.0, 0]])
    assert r.sup() == 3.0
