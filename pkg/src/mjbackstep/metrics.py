"""Lyapunov equation, weighted Lyapunov functional and decay-rate fits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ModeParams, OdeMatrices, hurwitz_check
from .transform import StateSnapshot, apply_transform

__all__ = [
    "LyapunovWeights",
    "solve_lyapunov",
    "lyapunov_weights",
    "lyapunov_value",
    "norm_equivalence_constants",
    "DecayFit",
    "fit_decay",
    "write_decay_csv",
    "write_fit_json",
]


def _is_spd(M, tol=0.0):
    M = np.asarray(M, dtype=float)
    return bool(np.allclose(M, M.T, rtol=0, atol=1e-14) and M[0, 0] > tol and np.linalg.det(M) > tol)


def solve_lyapunov(M, Qmat=None):
    """Solve ``P M + M^T P = -Qmat`` for symmetric ``P`` (2x2).

    The three unknowns ``(p11, p12, p22)`` satisfy a 3x3 linear system,
    which is solved directly.

    Raises
    ------
    ValueError
        ``M`` is not Hurwitz, ``Qmat`` is not symmetric positive definite,
        or the linear system is singular.
    """
    M = np.asarray(M, dtype=float)
    Qmat = np.eye(2) if Qmat is None else np.asarray(Qmat, dtype=float)
    if M.shape != (2, 2) or Qmat.shape != (2, 2):
        raise ValueError("M and Qmat must be 2x2")
    ok, abscissa = hurwitz_check(M)
    if not ok:
        raise ValueError(f"matrix is not Hurwitz (spectral abscissa {abscissa:.6g})")
    if not _is_spd(Qmat):
        raise ValueError("Qmat must be symmetric positive definite")
    (m11, m12), (m21, m22) = M
    L = np.array([
        [2 * m11, 2 * m21, 0.0],
        [m12, m11 + m22, m21],
        [0.0, 2 * m12, 2 * m22],
    ])
    rhs = -np.array([Qmat[0, 0], Qmat[0, 1], Qmat[1, 1]])
    try:
        p11, p12, p22 = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError:
        raise ValueError("Lyapunov system is singular") from None
    return np.array([[p11, p12], [p12, p22]])


@dataclass(frozen=True)
class LyapunovWeights:
    """Weights of the functional: decay ``nu``, ``a`` on the ``rho`` part, ``P`` on ``X``."""

    nu: float
    a: float
    P: np.ndarray
    Qmat: np.ndarray

    def __post_init__(self):
        if not (self.nu > 0 and self.a > 0):
            raise ValueError("nu and a must be positive")
        if not _is_spd(self.P):
            raise ValueError("P must be symmetric positive definite")


def lyapunov_weights(ode: OdeMatrices, nu=0.5, a=1.0, Qmat=None) -> LyapunovWeights:
    """Weights with ``P`` from the closed-loop ODE matrix ``A + B K``."""
    Qmat = np.eye(2) if Qmat is None else np.asarray(Qmat, dtype=float)
    return LyapunovWeights(nu, a, solve_lyapunov(ode.closed_loop, Qmat), Qmat)


def _weight_profiles(x, mode: ModeParams, nu, a):
    lam = np.asarray(mode.lambda_plus, dtype=float)
    lm = float(mode.lambda_minus)
    if np.any(lam <= 0) or lm <= 0:
        raise ValueError("transport speeds must be positive")
    d_theta = np.exp(-nu * x[None, :] / lam[:, None]) / lam[:, None]
    d_rho = a * np.exp(nu * x / lm) / lm
    return d_theta, d_rho


def lyapunov_value(s: StateSnapshot, k, mode: ModeParams, wts: LyapunovWeights) -> float:
    """``int theta^T D theta + D_rho rho^2 dx + X^T P X`` with mode-dependent exponential weights."""
    ts = apply_transform(s, k)
    d_theta, d_rho = _weight_profiles(s.x_grid, mode, wts.nu, wts.a)
    f = np.sum(d_theta * ts.theta**2, axis=0) + d_rho * ts.rho**2
    integral = s.h * (f.sum() - 0.5 * (f[0] + f[-1]))
    return float(integral + ts.X @ wts.P @ ts.X)


def norm_equivalence_constants(mode: ModeParams, wts: LyapunovWeights, x=None):
    """``(k1, k2)`` with ``k1 S^2 <= V <= k2 S^2``, ``S = ||theta|| + ||rho|| + |X|``.

    From the extreme values of the weights on ``[0, 1]`` and the
    eigenvalues of ``P``; the lower constant carries the factor 1/3 from
    ``S^2 <= 3 (||theta||^2 + ||rho||^2 + |X|^2)``.
    """
    x = np.linspace(0.0, 1.0, 201) if x is None else np.asarray(x)
    d_theta, d_rho = _weight_profiles(x, mode, wts.nu, wts.a)
    eig = np.linalg.eigvalsh(wts.P)
    lo = min(d_theta.min(), d_rho.min(), eig[0])
    hi = max(d_theta.max(), d_rho.max(), eig[-1])
    return lo / 3.0, hi


@dataclass(frozen=True)
class DecayFit:
    """``E[p(t)] ~ sigma exp(-zeta t)`` fitted on ``window``; ``r2`` is the coefficient of determination."""

    zeta: float
    sigma: float
    r2: float
    window: tuple

    def to_dict(self):
        return {"zeta": self.zeta, "sigma": self.sigma, "r2": self.r2, "window": list(self.window)}


def fit_decay(times, values, window=None) -> DecayFit:
    """Least-squares line through ``log(values)`` on ``window``.

    Raises
    ------
    ValueError
        Fewer than three samples in the window, or a nonpositive or
        non-finite value (e.g. from a blown-up trajectory).
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (float(t[0]), float(t[-1]))
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 3:
        raise ValueError("fit window holds fewer than 3 samples")
    t, v = t[sel], v[sel]
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("decay fit needs positive finite values on the window")
    y = np.log(v)
    tc = t - t.mean()
    yc = y - y.mean()
    slope = float(tc @ yc / (tc @ tc))
    intercept = float(y.mean() - slope * t.mean())
    resid = yc - slope * tc
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
    return DecayFit(zeta=-slope, sigma=float(np.exp(intercept)), r2=r2, window=(float(lo), float(hi)))


def write_decay_csv(path, times, mean_p, mean_v=None):
    mean_v = np.full(len(times), np.nan) if mean_v is None else mean_v
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "Ep", "V_mean"])
        for t, p, v in zip(times, mean_p, mean_v):
            wr.writerow([repr(float(t)), repr(float(p)), repr(float(v))])


def write_fit_json(path, fit: DecayFit | None, extra=None):
    doc = {"zeta": None, "sigma": None, "r2": None, "window": None} if fit is None else fit.to_dict()
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2))
