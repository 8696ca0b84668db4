"""Continuous-time Markov jump process over parameter modes.

Transition rates may depend on time.  Probabilities follow the
Kolmogorov forward equations; realizations are sampled exactly by
thinning against the constant majorant ``r * tau_star``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import RateBoundError

__all__ = [
    "ConstantRates",
    "FiveStateSchedule",
    "TabulatedRates",
    "CallableRates",
    "MarkovChainSpec",
    "MarkovPath",
    "rates_from_dict",
    "rates_to_dict",
    "generator_matrix",
    "kolmogorov_evolve",
    "transition_matrix",
    "sample_path",
    "sample_modes_at",
    "mode_at",
    "path_to_csv",
    "path_from_csv",
]

_RATE_TOL = 1e-12


class _Rates:
    """Base class: ``matrix(t)`` returns the r x r rate matrix at time ``t``."""

    size: int

    def matrix(self, t):
        raise NotImplementedError

    def row(self, i, t):
        return self.matrix(t)[i]

    def rows(self, modes, times):
        """Rate rows for many (mode, time) pairs, shape (len(modes), r)."""
        return np.stack([self.row(int(m), float(t)) for m, t in zip(modes, times)])

    def sup(self):
        """Supremum of all rates, or None when it cannot be computed."""
        return None


class ConstantRates(_Rates):
    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rate matrix must be square")
        if np.any(np.diag(m) != 0):
            raise ValueError("rate matrix diagonal must be zero")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("rates must be finite and non-negative")
        m.flags.writeable = False
        self._m = m
        self.size = m.shape[0]

    def matrix(self, t):
        return self._m

    def row(self, i, t):
        return self._m[i]

    def rows(self, modes, times):
        return self._m[modes]

    def sup(self):
        return float(self._m.max()) if self._m.size else 0.0

    def __eq__(self, other):
        return isinstance(other, ConstantRates) and np.array_equal(self._m, other._m)


class FiveStateSchedule(_Rates):
    """Five-mode schedule with two extreme and three middle states.

    With 1-based labels: leaving an extreme state {1, 5} happens at rate
    20 towards every other state; a middle state {2, 3, 4} enters each
    extreme state at rate 1; between distinct middle states the rate is
    ``10 (1 + 2 cos(1e-3 (i + 5 j) t))**2``.
    """

    size = 5
    _extreme = (0, 4)

    def _rate(self, i, j, t):
        if i == j:
            return 0.0
        if i in self._extreme:
            return 20.0
        if j in self._extreme:
            return 1.0
        c = 1.0 + 2.0 * math.cos(1e-3 * ((i + 1) + 5 * (j + 1)) * t)
        return 10.0 * c * c

    _i1 = np.arange(1, 6)[:, None]
    _j1 = np.arange(1, 6)[None, :]
    _freq = 1e-3 * (_i1 + 5 * _j1)
    _middle = ~np.isin(_i1, (1, 5)) & ~np.isin(_j1, (1, 5)) & (_i1 != _j1)
    _fixed = np.where(np.isin(_i1, (1, 5)), 20.0, np.where(np.isin(_j1, (1, 5)), 1.0, 0.0)) * (_i1 != _j1)

    def matrix(self, t):
        c = 1.0 + 2.0 * np.cos(self._freq * t)
        return np.where(self._middle, 10.0 * c * c, self._fixed)

    def row(self, i, t):
        return np.array([self._rate(i, j, t) for j in range(5)])

    def rows(self, modes, times):
        modes = np.asarray(modes)
        times = np.asarray(times, dtype=float)
        i1 = modes[:, None] + 1
        j1 = np.arange(1, 6)[None, :]
        c = 1.0 + 2.0 * np.cos(1e-3 * (i1 + 5 * j1) * times[:, None])
        out = 10.0 * c * c
        out = np.where(np.isin(j1, (1, 5)), 1.0, out)
        out = np.where(np.isin(i1, (1, 5)), 20.0, out)
        out[i1 == j1] = 0.0
        return out

    def sup(self):
        return 90.0

    def __eq__(self, other):
        return isinstance(other, FiveStateSchedule)


class TabulatedRates(_Rates):
    """Rate matrices sampled at increasing times, linearly interpolated (clamped outside)."""

    def __init__(self, times, matrices):
        ts = np.array(times, dtype=float)
        ms = np.array(matrices, dtype=float)
        if ts.ndim != 1 or ts.size < 1 or np.any(np.diff(ts) <= 0):
            raise ValueError("tabulated times must be strictly increasing")
        if ms.ndim != 3 or ms.shape[0] != ts.size or ms.shape[1] != ms.shape[2]:
            raise ValueError("matrices must have shape (len(times), r, r)")
        if np.any(ms < 0) or not np.all(np.isfinite(ms)):
            raise ValueError("rates must be finite and non-negative")
        if np.any(np.einsum("kii->ki", ms) != 0):
            raise ValueError("rate matrix diagonal must be zero")
        self.times, self.matrices = ts, ms
        self.size = ms.shape[1]

    def matrix(self, t):
        ts = self.times
        if t <= ts[0]:
            return self.matrices[0]
        if t >= ts[-1]:
            return self.matrices[-1]
        k = int(np.searchsorted(ts, t, side="right")) - 1
        a = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - a) * self.matrices[k] + a * self.matrices[k + 1]

    def sup(self):
        return float(self.matrices.max())

    def __eq__(self, other):
        return (
            isinstance(other, TabulatedRates)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.matrices, other.matrices)
        )


class CallableRates(_Rates):
    """Wrap ``fn(t) -> (r, r) array``.  In-process only (not serializable)."""

    def __init__(self, fn: Callable[[float], np.ndarray], size: int):
        self.fn = fn
        self.size = size

    def matrix(self, t):
        return np.asarray(self.fn(t), dtype=float)


def rates_from_dict(d, size):
    kind = d.get("kind")
    if kind == "paper_s61":
        if size != 5:
            raise ValueError(f"the five-state schedule needs 5 modes, got {size}")
        return FiveStateSchedule()
    if kind == "constant":
        rates = ConstantRates(d["matrix"])
    elif kind == "tabulated":
        rates = TabulatedRates(d["times"], d["matrices"])
    else:
        raise ValueError(f"unknown rate kind {kind!r}")
    if rates.size != size:
        raise ValueError(f"rate matrix is {rates.size}x{rates.size} but there are {size} modes")
    return rates


def rates_to_dict(rates):
    if isinstance(rates, FiveStateSchedule):
        return {"kind": "paper_s61"}
    if isinstance(rates, ConstantRates):
        return {"kind": "constant", "matrix": rates.matrix(0.0).tolist()}
    if isinstance(rates, TabulatedRates):
        return {"kind": "tabulated", "times": rates.times.tolist(), "matrices": rates.matrices.tolist()}
    raise TypeError(f"{type(rates).__name__} cannot be serialized")


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """Finite mode list, time-varying rates and the declared rate bound.

    ``tau_star=None`` takes the bound from the rate schedule itself.
    ``initial_mode`` is a 0-based index into ``modes``.
    """

    modes: tuple
    rates: _Rates
    tau_star: float | None = None
    initial_mode: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        r = len(self.modes)
        if r < 1:
            raise ValueError("at least one mode is required")
        if self.rates.size != r:
            raise ValueError(f"rates describe {self.rates.size} modes but {r} were given")
        sup = self.rates.sup()
        tau = self.tau_star
        if tau is None:
            if sup is None:
                raise ValueError("tau_star must be declared for callable rates")
            tau = sup
        tau = float(tau)
        if not math.isfinite(tau) or tau < 0:
            raise ValueError("tau_star must be finite and non-negative")
        if sup is not None and sup > tau * (1 + _RATE_TOL):
            raise ValueError(f"rates reach {sup} which exceeds tau_star={tau}")
        object.__setattr__(self, "tau_star", tau)
        if not 0 <= self.initial_mode < r:
            raise ValueError(f"initial_mode {self.initial_mode} out of range for {r} modes")

    @property
    def n_modes(self):
        return len(self.modes)

    def __eq__(self, other):
        if not isinstance(other, MarkovChainSpec):
            return NotImplemented
        return (
            self.modes == other.modes
            and self.rates == other.rates
            and self.tau_star == other.tau_star
            and self.initial_mode == other.initial_mode
        )


@dataclass(frozen=True)
class MarkovPath:
    """Right-continuous piecewise-constant realization on ``[0, horizon]``."""

    jump_times: tuple
    mode_indices: tuple
    horizon: float

    def __post_init__(self):
        jt = tuple(float(t) for t in self.jump_times)
        mi = tuple(int(m) for m in self.mode_indices)
        if not jt or jt[0] != 0.0:
            raise ValueError("jump_times must start at 0")
        if len(jt) != len(mi):
            raise ValueError("one mode index per segment is required")
        if any(b <= a for a, b in zip(jt, jt[1:])):
            raise ValueError("jump_times must be strictly increasing")
        if jt[-1] >= self.horizon and len(jt) > 1:
            raise ValueError("jump times must lie before the horizon")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "mode_indices", mi)

    @classmethod
    def constant(cls, mode, horizon):
        return cls((0.0,), (int(mode),), float(horizon))

    @property
    def n_jumps(self):
        return len(self.jump_times) - 1


def generator_matrix(rates, t):
    """Infinitesimal generator ``tau(t) - diag(c(t))`` (rows sum to zero)."""
    m = np.asarray(rates.matrix(t), dtype=float)
    if np.any(m < 0):
        raise RateBoundError(f"negative transition rate at t={t}")
    g = m.copy()
    np.fill_diagonal(g, 0.0)
    g[np.diag_indices_from(g)] = -g.sum(axis=1)
    return g


def _rk4_propagate(rates, P, t0, t1, dt, on_step=None):
    """Advance the row block ``P`` from ``t0`` to ``t1`` under ``dP/dt = P G(t)``."""
    steps = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / steps
    g1 = generator_matrix(rates, t0)
    for k in range(steps):
        t = t0 + k * h
        g0 = g1
        gm = generator_matrix(rates, t + 0.5 * h)
        g1 = generator_matrix(rates, t + h)
        k1 = P @ g0
        k2 = (P + 0.5 * h * k1) @ gm
        k3 = (P + 0.5 * h * k2) @ gm
        k4 = (P + h * k3) @ g1
        P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        sums = P.sum(axis=-1, keepdims=True)
        drift = float(np.max(np.abs(sums - 1.0)))
        if on_step is not None:
            on_step(t + h, P)
        if drift > 1e-6:
            raise RuntimeError(f"probability row drifted by {drift:.3g} at t={t + h}")
        if drift > 1e-12:
            P = P / sums
    return P


def kolmogorov_evolve(spec: MarkovChainSpec, i: int, t0: float, t1: float, dt: float = 1e-3):
    """Row ``P_{i, .}(t0, t1)`` of the transition probability matrix.

    Integrates ``dP/dt = P G(t)`` with classical RK4 from the unit row at
    ``i``.  The row sum is conserved by RK4 up to rounding; it is only
    renormalized when the drift exceeds 1e-12 and an error is raised past
    1e-6.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = np.zeros(spec.n_modes)
    p[i] = 1.0
    if t1 == t0:
        return p
    p = _rk4_propagate(spec.rates, p, t0, t1, dt)
    # RK4 can leave round-off sized negatives on unreachable states.
    return np.clip(p, 0.0, 1.0)


def transition_matrix(spec: MarkovChainSpec, t0: float, t1: float, dt: float = 1e-3, on_step=None):
    """Full matrix ``P(t0, t1)``.

    ``on_step(t, P)`` sees every RK4 step before any renormalization.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    P = np.eye(spec.n_modes)
    if t1 == t0:
        return P
    return np.clip(_rk4_propagate(spec.rates, P, t0, t1, dt, on_step), 0.0, 1.0)


def _check_row(row, tau_star, t):
    if np.any(row < 0):
        raise RateBoundError(f"negative transition rate at t={t}")
    if np.any(row > tau_star * (1 + _RATE_TOL)):
        raise RateBoundError(f"rate {row.max():.6g} exceeds tau_star={tau_star} at t={t}")


def sample_path(spec: MarkovChainSpec, horizon: float, seed: int, initial_mode: int | None = None) -> MarkovPath:
    """Sample one realization on ``[0, horizon]`` by Lewis-Shedler thinning.

    Candidate event times arrive at the constant majorant rate
    ``r * tau_star``; a candidate at time ``t`` in mode ``j`` is accepted
    with probability ``c_j(t) / (r * tau_star)`` and the target mode is
    drawn proportionally to ``tau_{j k}(t)``.  Deterministic given ``seed``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    mode = spec.initial_mode if initial_mode is None else int(initial_mode)
    r = spec.n_modes
    if r == 1:
        return MarkovPath.constant(mode, horizon)
    if spec.tau_star == 0:
        raise RateBoundError("tau_star is zero but more than one mode is declared")
    majorant = r * spec.tau_star
    rng = np.random.default_rng(seed)
    rates = spec.rates

    times, modes = [0.0], [mode]
    t = 0.0
    block = 4096
    expo, unif, pick = rng.standard_exponential(block), rng.random(block), rng.random(block)
    k = 0
    while True:
        if k == block:
            expo, unif, pick = rng.standard_exponential(block), rng.random(block), rng.random(block)
            k = 0
        t += expo[k] / majorant
        if t >= horizon:
            break
        row = rates.row(mode, t)
        _check_row(row, spec.tau_star, t)
        total = float(row.sum())
        if unif[k] * majorant < total:
            cum = np.cumsum(row)
            nxt = int(np.searchsorted(cum, pick[k] * total, side="right"))
            nxt = min(nxt, r - 1)
            if nxt != mode:
                mode = nxt
                times.append(t)
                modes.append(mode)
        k += 1
    return MarkovPath(tuple(times), tuple(modes), float(horizon))


def sample_modes_at(spec: MarkovChainSpec, t: float, n_paths: int, seed: int, initial_mode: int | None = None):
    """Mode occupied at time ``t`` by ``n_paths`` independent realizations.

    Same thinning construction as :func:`sample_path`, advanced in
    lockstep across paths so large ensembles stay cheap.
    """
    mode0 = spec.initial_mode if initial_mode is None else int(initial_mode)
    modes = np.full(n_paths, mode0, dtype=int)
    r = spec.n_modes
    if r == 1 or t <= 0:
        return modes
    if spec.tau_star == 0:
        raise RateBoundError("tau_star is zero but more than one mode is declared")
    majorant = r * spec.tau_star
    rng = np.random.default_rng(seed)
    clock = np.zeros(n_paths)
    active = np.arange(n_paths)
    while active.size:
        clock[active] += rng.standard_exponential(active.size) / majorant
        active = active[clock[active] < t]
        if not active.size:
            break
        rows = spec.rates.rows(modes[active], clock[active])
        _check_row(rows, spec.tau_star, "batch")
        totals = rows.sum(axis=1)
        u = rng.random(active.size)
        v = rng.random(active.size)
        hit = u * majorant < totals
        if np.any(hit):
            cum = np.cumsum(rows[hit], axis=1)
            nxt = (cum <= (v[hit] * totals[hit])[:, None]).sum(axis=1)
            modes[active[hit]] = np.minimum(nxt, r - 1)
    return modes


def mode_at(path: MarkovPath, t: float) -> int:
    """Mode index in force at ``t`` (post-jump value at a jump time)."""
    if t < 0 or t > path.horizon:
        raise ValueError(f"t={t} outside [0, {path.horizon}]")
    k = int(np.searchsorted(path.jump_times, t, side="right")) - 1
    return path.mode_indices[k]


def path_to_csv(path: MarkovPath) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_jump", "mode"])
    for t, m in zip(path.jump_times, path.mode_indices):
        writer.writerow([repr(t), m])
    return buf.getvalue()


def path_from_csv(text: str, horizon: float) -> MarkovPath:
    rows = list(csv.DictReader(io.StringIO(text)))
    return MarkovPath(
        tuple(float(r["t_jump"]) for r in rows), tuple(int(r["mode"]) for r in rows), horizon
    )


def modes_sequence(path: MarkovPath, times: Sequence[float]):
    """Vectorized :func:`mode_at` over sorted ``times``."""
    idx = np.searchsorted(path.jump_times, np.asarray(times), side="right") - 1
    return np.asarray(path.mode_indices)[idx]
