"""System parameters, scenario configuration and its JSON document format.

The plant couples three rightward transport states ``w``, one leftward
state ``z`` and a two-dimensional ODE state ``X``.  Mode-dependent
coefficients live in :class:`ModeParams`; the fixed ODE data and the
feedback gain live in :class:`OdeMatrices`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .exceptions import ConfigError
from .markov import MarkovChainSpec, rates_from_dict, rates_to_dict

__all__ = [
    "PARAM_NAMES",
    "OdeMatrices",
    "ModeParams",
    "Profile",
    "InitialConditions",
    "GridSpec",
    "ScenarioConfig",
    "hurwitz_check",
    "load_config",
    "load_config_file",
    "save_config",
    "bundled_config_path",
    "load_bundled_config",
]


def _frozen_array(value, shape, name):
    arr = np.array(value, dtype=float)
    if arr.size != int(np.prod(shape)):
        raise ConfigError(f"expected {int(np.prod(shape))} numbers, got {arr.size}", field=name)
    arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("entries must be finite", field=name)
    arr.flags.writeable = False
    return arr


def _eq_fields(a, b):
    if type(a) is not type(b):
        return NotImplemented
    for f in fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if not np.array_equal(np.asarray(x), np.asarray(y)):
                return False
        elif x != y:
            return False
    return True


def hurwitz_check(M):
    """Test whether a square matrix is Hurwitz.

    Parameters
    ----------
    M : array-like, shape (n, n)
        Real matrix with ``n`` in {2, 3, 4}.

    Returns
    -------
    is_hurwitz : bool
        True iff every eigenvalue has strictly negative real part.
    abscissa : float
        The spectral abscissa ``max Re(eig(M))``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] not in (2, 3, 4):
        raise ValueError("matrix size must be 2, 3 or 4")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    abscissa = float(np.max(np.linalg.eigvals(M).real))
    return abscissa < 0.0, abscissa


@dataclass(frozen=True, eq=False)
class OdeMatrices:
    """ODE block ``X' = A X + B z(0)``, output ``C X`` into ``w(0)``, gain ``K``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen_array(self.A, (2, 2), "ode.A"))
        object.__setattr__(self, "B", _frozen_array(self.B, (2, 1), "ode.B"))
        object.__setattr__(self, "C", _frozen_array(self.C, (3, 2), "ode.C"))
        object.__setattr__(self, "K", _frozen_array(self.K, (1, 2), "ode.K"))

    __eq__ = _eq_fields

    @property
    def closed_loop(self):
        """The matrix ``A + B K``."""
        return self.A + self.B @ self.K

    def validate(self):
        ok, abscissa = hurwitz_check(self.closed_loop)
        if not ok:
            raise ConfigError(
                f"A+BK not Hurwitz (spectral abscissa {abscissa:.6g})", field="ode.K"
            )
        return self

    def to_dict(self):
        return {
            "A": self.A.ravel().tolist(),
            "B": self.B.ravel().tolist(),
            "C": self.C.ravel().tolist(),
            "K": self.K.ravel().tolist(),
        }


_MODE_SHAPES = {
    "lambda_plus": (3,),
    "lambda_minus": (),
    "sigma_pp": (3, 3),
    "sigma_pm": (3, 1),
    "sigma_mp": (1, 3),
    "sigma_mm": (),
    "Q": (3, 1),
    "R": (1, 3),
}


def _param_names():
    names = []
    for key, shape in _MODE_SHAPES.items():
        if shape == ():
            names.append(key)
        elif key == "sigma_pp":
            names.extend(f"{key}[{i},{j}]" for i in range(3) for j in range(3))
        else:
            names.extend(f"{key}[{i}]" for i in range(int(np.prod(shape))))
    return tuple(names)


#: Canonical flattening order of one parameter set (26 entries).
PARAM_NAMES = _param_names()


@dataclass(frozen=True, eq=False)
class ModeParams:
    """One realization of the switching coefficients.

    ``lambda_plus`` holds the diagonal of the rightward speed matrix.
    Scalars ``lambda_minus`` and ``sigma_mm`` are stored as floats.
    """

    lambda_plus: np.ndarray
    lambda_minus: float
    sigma_pp: np.ndarray
    sigma_pm: np.ndarray
    sigma_mp: np.ndarray
    sigma_mm: float
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for key, shape in _MODE_SHAPES.items():
            value = getattr(self, key)
            if shape == ():
                try:
                    value = float(value)
                except (TypeError, ValueError):
                    raise ConfigError("expected a number", field=key) from None
                if not math.isfinite(value):
                    raise ConfigError("entries must be finite", field=key)
            else:
                value = _frozen_array(value, shape, key)
            object.__setattr__(self, key, value)

    __eq__ = _eq_fields

    @property
    def Lambda_plus(self):
        return np.diag(self.lambda_plus)

    def validate(self, bounds=(-1e3, 1e3)):
        if np.any(self.lambda_plus <= 0):
            raise ConfigError("lambda_plus must be positive", field="lambda_plus")
        if self.lambda_minus <= 0:
            raise ConfigError("lambda_minus must be positive", field="lambda_minus")
        lo, hi = bounds
        vec = self.to_vector()
        bad = np.flatnonzero((vec < lo) | (vec > hi))
        if bad.size:
            name = PARAM_NAMES[bad[0]]
            raise ConfigError(f"value {vec[bad[0]]} outside bounds [{lo}, {hi}]", field=name)
        return self

    def to_vector(self):
        parts = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float)).ravel() for k in _MODE_SHAPES]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} entries, got {vec.size}")
        kwargs, pos = {}, 0
        for key, shape in _MODE_SHAPES.items():
            size = int(np.prod(shape)) if shape else 1
            chunk = vec[pos:pos + size]
            kwargs[key] = float(chunk[0]) if shape == () else chunk
            pos += size
        return cls(**kwargs)

    def with_values(self, names, values):
        """Copy with the named canonical entries (see ``PARAM_NAMES``) replaced."""
        vec = self.to_vector()
        for name, value in zip(names, np.atleast_1d(values)):
            try:
                vec[PARAM_NAMES.index(name)] = value
            except ValueError:
                raise KeyError(f"unknown parameter name {name!r}") from None
        return ModeParams.from_vector(vec)

    def values_of(self, names):
        vec = self.to_vector()
        return np.array([vec[PARAM_NAMES.index(n)] for n in names])

    def to_dict(self):
        out = {}
        for key, shape in _MODE_SHAPES.items():
            value = getattr(self, key)
            out[key] = value if shape == () else value.ravel().tolist()
        return out

    @classmethod
    def from_dict(cls, d, base=None, prefix="nominal"):
        """Build from a mapping; missing keys fall back to ``base`` when given."""
        if not isinstance(d, Mapping):
            raise ConfigError("expected an object", field=prefix)
        unknown = set(d) - set(_MODE_SHAPES)
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", field=prefix)
        kwargs = {}
        for key in _MODE_SHAPES:
            if key in d:
                kwargs[key] = d[key]
            elif base is not None:
                kwargs[key] = getattr(base, key)
            else:
                raise ConfigError("missing key", field=f"{prefix}.{key}")
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(exc.reason, field=f"{prefix}.{exc.field}") from None


_PROFILE_KINDS = ("sine", "linear", "zero", "tabulated")


@dataclass(frozen=True, eq=False)
class Profile:
    """Initial profile on [0, 1] for a block of ``ncomp`` components.

    Kinds: ``sine`` (``amplitude * sin(2 pi frequency x)``), ``linear``
    (``intercept + slope x``), ``zero`` and ``tabulated`` (piecewise
    linear through samples).
    """

    kind: str
    ncomp: int
    amplitude: np.ndarray = field(default_factory=lambda: np.ones(1))
    frequency: float = 1.0
    slope: np.ndarray = field(default_factory=lambda: np.zeros(1))
    intercept: np.ndarray = field(default_factory=lambda: np.zeros(1))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))

    __eq__ = _eq_fields

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = self.ncomp
        if self.kind == "zero":
            return np.zeros((n, x.size))
        if self.kind == "sine":
            amp = np.broadcast_to(self.amplitude, (n,))
            return amp[:, None] * np.sin(2 * np.pi * self.frequency * x)[None, :]
        if self.kind == "linear":
            s = np.broadcast_to(self.slope, (n,))
            c = np.broadcast_to(self.intercept, (n,))
            return c[:, None] + s[:, None] * x[None, :]
        vals = np.broadcast_to(self.values, (n, self.x.size))
        return np.stack([np.interp(x, self.x, v) for v in vals])

    @classmethod
    def from_dict(cls, d, ncomp, name):
        if not isinstance(d, Mapping) or "kind" not in d:
            raise ConfigError("expected an object with a 'kind'", field=name)
        kind = d["kind"]
        if kind not in _PROFILE_KINDS:
            raise ConfigError(f"unknown profile kind {kind!r}", field=f"{name}.kind")

        def vec(key, default):
            arr = np.atleast_1d(np.asarray(d.get(key, default), dtype=float))
            if arr.size not in (1, ncomp) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"expected 1 or {ncomp} finite numbers", field=f"{name}.{key}")
            return arr

        if kind == "sine":
            return cls(kind, ncomp, amplitude=vec("amplitude", 1.0), frequency=float(d.get("frequency", 1.0)))
        if kind == "linear":
            return cls(kind, ncomp, slope=vec("slope", 0.0), intercept=vec("intercept", 0.0))
        if kind == "zero":
            return cls(kind, ncomp)
        xs = np.asarray(d.get("x", []), dtype=float)
        vals = np.atleast_2d(np.asarray(d.get("values", []), dtype=float))
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ConfigError("tabulated x must be increasing with >= 2 samples", field=f"{name}.x")
        if vals.shape[-1] != xs.size or vals.shape[0] not in (1, ncomp):
            raise ConfigError("values do not match x", field=f"{name}.values")
        return cls(kind, ncomp, x=xs, values=vals)

    def to_dict(self):
        if self.kind == "sine":
            return {"kind": "sine", "amplitude": self.amplitude.tolist(), "frequency": self.frequency}
        if self.kind == "linear":
            return {"kind": "linear", "slope": self.slope.tolist(), "intercept": self.intercept.tolist()}
        if self.kind == "zero":
            return {"kind": "zero"}
        return {"kind": "tabulated", "x": self.x.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class InitialConditions:
    w: Profile
    z: Profile
    X0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X0", _frozen_array(self.X0, (2,), "init.X0"))

    __eq__ = _eq_fields

    @classmethod
    def default(cls):
        return cls(
            w=Profile("sine", 3, amplitude=np.ones(3), frequency=1.0),
            z=Profile("linear", 1, slope=np.ones(1), intercept=np.zeros(1)),
            X0=np.array([1.0, -1.0]),
        )

    def sample(self, x):
        """Return ``(w, z, X)`` on the nodes ``x``."""
        return self.w(x), self.z(x)[0], np.array(self.X0)


@dataclass(frozen=True)
class GridSpec:
    nx: int = 200
    cfl: float = 0.5
    t_end: float = 70.0
    max_snapshots: int = 500

    def validate(self):
        if int(self.nx) != self.nx or self.nx < 4:
            raise ConfigError("nx must be an integer >= 4", field="grid.nx")
        if not (0.0 < self.cfl <= 1.0):
            raise ConfigError("cfl must lie in (0, 1]", field="grid.cfl")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive", field="grid.t_end")
        if self.max_snapshots < 2:
            raise ConfigError("max_snapshots must be >= 2", field="grid.max_snapshots")
        return self


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything needed to run one closed-loop scenario."""

    ode: OdeMatrices
    nominal: ModeParams
    markov: MarkovChainSpec
    grid: GridSpec = GridSpec()
    init: InitialConditions = field(default_factory=InitialConditions.default)
    seed: int = 0
    bounds: tuple = (-1e3, 1e3)
    reflection_point: str = "x1"

    __eq__ = _eq_fields

    def validate(self):
        self.ode.validate()
        self.nominal.validate(self.bounds)
        for i, mode in enumerate(self.markov.modes):
            try:
                mode.validate(self.bounds)
            except ConfigError as exc:
                raise ConfigError(exc.reason, field=f"markov.modes[{i}].{exc.field}") from None
        self.grid.validate()
        if self.reflection_point not in ("x0", "x1"):
            raise ConfigError("reflection_point must be 'x0' or 'x1'", field="reflection_point")
        return self

    def with_markov(self, markov):
        return replace(self, markov=markov)

    def to_dict(self):
        return {
            "ode": self.ode.to_dict(),
            "nominal": self.nominal.to_dict(),
            "markov": {
                "modes": [m.to_dict() for m in self.markov.modes],
                "rates": rates_to_dict(self.markov.rates),
                "tau_star": self.markov.tau_star,
                "initial_mode": self.markov.initial_mode,
            },
            "grid": {
                "nx": self.grid.nx,
                "cfl": self.grid.cfl,
                "t_end": self.grid.t_end,
                "max_snapshots": self.grid.max_snapshots,
            },
            "init": {"w": self.init.w.to_dict(), "z": self.init.z.to_dict(), "X0": self.init.X0.tolist()},
            "seed": self.seed,
            "bounds": list(self.bounds),
            "reflection_point": self.reflection_point,
        }


def _require(doc, key, where):
    if key not in doc:
        raise ConfigError("missing key", field=f"{where}.{key}" if where else key)
    return doc[key]


def _parse_document(doc: Mapping[str, Any]) -> ScenarioConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("top level must be an object")
    ode_doc = _require(doc, "ode", "")
    if not isinstance(ode_doc, Mapping):
        raise ConfigError("expected an object", field="ode")
    ode = OdeMatrices(*(_require(ode_doc, k, "ode") for k in "ABCK"))
    nominal = ModeParams.from_dict(_require(doc, "nominal", ""), prefix="nominal")

    mk = doc.get("markov", {})
    modes_doc = mk.get("modes")
    if modes_doc is None:
        modes = (nominal,)
    else:
        if not isinstance(modes_doc, list) or not modes_doc:
            raise ConfigError("modes must be a non-empty list", field="markov.modes")
        modes = tuple(
            ModeParams.from_dict(m, base=nominal, prefix=f"markov.modes[{i}]") for i, m in enumerate(modes_doc)
        )
    try:
        rates = rates_from_dict(mk.get("rates", {"kind": "constant", "matrix": np.zeros((len(modes), len(modes))).tolist()}), len(modes))
    except ValueError as exc:
        raise ConfigError(str(exc), field="markov.rates") from None
    initial_mode = mk.get("initial_mode")
    if initial_mode is None:
        initial_mode = next((i for i, m in enumerate(modes) if m == nominal), 0)
    try:
        markov = MarkovChainSpec(modes, rates, mk.get("tau_star"), int(initial_mode))
    except ValueError as exc:
        raise ConfigError(str(exc), field="markov") from None

    g = doc.get("grid", {})
    grid = GridSpec(
        nx=g.get("nx", 200), cfl=float(g.get("cfl", 0.5)), t_end=float(g.get("t_end", 70.0)),
        max_snapshots=int(g.get("max_snapshots", 500)),
    )

    init_doc = doc.get("init")
    if init_doc is None:
        init = InitialConditions.default()
    else:
        default = InitialConditions.default()
        init = InitialConditions(
            w=Profile.from_dict(init_doc["w"], 3, "init.w") if "w" in init_doc else default.w,
            z=Profile.from_dict(init_doc["z"], 1, "init.z") if "z" in init_doc else default.z,
            X0=init_doc.get("X0", default.X0),
        )
    bounds = doc.get("bounds", [-1e3, 1e3])
    if isinstance(bounds, Mapping):
        bounds = [bounds.get("lower", -1e3), bounds.get("upper", 1e3)]
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer", field="seed")
    cfg = ScenarioConfig(
        ode=ode, nominal=nominal, markov=markov, grid=grid, init=init, seed=seed,
        bounds=(float(bounds[0]), float(bounds[1])),
        reflection_point=doc.get("reflection_point", "x1"),
    )
    return cfg.validate()


def load_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario document.

    Raises
    ------
    ConfigError
        On malformed JSON (with the line number) or any violated
        invariant (with the field path).  Nothing is returned partially.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    try:
        return _parse_document(doc)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"malformed document: {exc}") from None


def load_config_file(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return load_config(text)


def save_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)


def bundled_config_path(name="paper_s61.json"):
    return resources.files("mjbackstep") / "data" / name


def load_bundled_config(name="paper_s61.json") -> ScenarioConfig:
    return load_config(bundled_config_path(name).read_text())
