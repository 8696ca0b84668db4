"""Branch/trunk operator network mapping plant coefficients to kernels.

Six output channels share one trunk: the three components of ``K``, ``N``
and the two components of ``gamma``.  For a parameter vector ``u`` and a
point ``y = (x, xi)``

    G(u)(y)_c = mean_c + std_c * (sum_i branch_{c,i}(u) trunk_{c,i}(y) + bias_c)

``gamma`` is read at ``y = (x, 0)``.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DivergenceError, SchemaError
from .kernel_solver import KernelGrid, TriMesh, grid_from_dict, grid_to_dict, solve_kernels
from .nn import MLP, Adam
from .params import PARAM_NAMES, ModeParams, OdeMatrices

__all__ = [
    "CHANNELS",
    "ParamSpec",
    "KernelDataset",
    "TrainConfig",
    "OperatorModel",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "train",
    "infer",
    "save_model",
    "load_model",
    "DeepONetKernelRegressor",
]

CHANNELS = ("K1", "K2", "K3", "N", "gamma1", "gamma2")
N_CH = len(CHANNELS)


@dataclass(frozen=True)
class ParamSpec:
    """Which canonical parameters vary and their uniform sampling ranges."""

    names: tuple
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not self.names:
            raise ConfigError("at least one parameter must vary", field="param_spec")
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise ConfigError("names, lo and hi must have equal length", field="param_spec")
        for name, a, b in zip(self.names, self.lo, self.hi):
            if name not in PARAM_NAMES:
                raise ConfigError(f"unknown parameter {name!r}", field="param_spec.names")
            if not (np.isfinite(a) and np.isfinite(b)) or a > b:
                raise ConfigError(f"invalid range [{a}, {b}]", field=f"param_spec.{name}")
        # keep the canonical order
        order = sorted(range(len(self.names)), key=lambda k: PARAM_NAMES.index(self.names[k]))
        object.__setattr__(self, "names", tuple(self.names[k] for k in order))
        object.__setattr__(self, "lo", tuple(self.lo[k] for k in order))
        object.__setattr__(self, "hi", tuple(self.hi[k] for k in order))

    @property
    def dim(self):
        return len(self.names)

    def normalize(self, u):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        return 2.0 * (np.asarray(u, dtype=float) - lo) / span - 1.0

    def denormalize(self, v):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        return lo + 0.5 * (np.asarray(v, dtype=float) + 1.0) * span

    def to_dict(self):
        return {"names": list(self.names), "lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["lo"], d["hi"])


def _ode_from_dict(d):
    return OdeMatrices(
        np.reshape(d["A"], (2, 2)), np.reshape(d["B"], (2, 1)), np.reshape(d["C"], (3, 2)), np.reshape(d["K"], (1, 2))
    )


def _trunk_nodes(n):
    """Normalized trunk inputs at every triangular node and the gamma mask."""
    mesh = TriMesh(n)
    x, xi = mesh.nodes()
    y = np.stack([2.0 * x - 1.0, 2.0 * xi - 1.0], axis=1)
    mask = np.ones((N_CH, x.size))
    mask[4:] = (mesh.indices()[1] == 0)
    return y, mask


def _grid_targets(grid: KernelGrid):
    """Channel-first target array (6, T) on the triangular nodes of ``grid``."""
    mesh = grid.mesh
    a, b = mesh.indices()
    out = np.zeros((N_CH, a.size))
    out[:3] = grid.K[:, a, b]
    out[3] = grid.N[a, b]
    out[4:] = grid.gamma[:, a]  # used only where b == 0
    return out


@dataclass
class KernelDataset:
    """Parameter draws and the solver kernels computed for them."""

    param_spec: ParamSpec
    n: int
    params: np.ndarray
    grids: list
    base: ModeParams
    ode: OdeMatrices

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if len(self.grids) == 0 or self.params.shape != (len(self.grids), self.param_spec.dim):
            raise ValueError("dataset needs one parameter row per grid")
        gain = np.ravel(self.ode.K)
        for k, g in enumerate(self.grids):
            if g.n != self.n:
                raise ValueError(f"sample {k} has mesh n={g.n}, expected {self.n}")
            if not np.array_equal(np.ravel(g.gain), gain):
                raise ValueError(f"sample {k} uses a different gain")
            if g.residuals is not None and g.residuals.bc_diag > 1e-10:
                raise ValueError(f"sample {k} fails the diagonal residual threshold")

    def __len__(self):
        return len(self.grids)

    def targets(self):
        """Targets (6, S, T) and mask (6, T) over all triangular nodes."""
        Y = np.stack([_grid_targets(g) for g in self.grids], axis=1)
        return Y, _trunk_nodes(self.n)[1]


def _solve_one(base, names, values, ode, n):
    return solve_kernels(base.with_values(names, values), ode, n)


def generate_dataset(ode: OdeMatrices, base: ModeParams, param_spec: ParamSpec, count: int, n: int,
                     seed: int, n_jobs: int = 1) -> KernelDataset:
    """Draw ``count`` parameter vectors uniformly and solve their kernels.

    Draws depend only on ``seed``; solves run in parallel when ``n_jobs``
    differs from 1 and results keep the draw order.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(np.asarray(param_spec.lo), np.asarray(param_spec.hi), size=(count, param_spec.dim))
    for row in draws:
        base.with_values(param_spec.names, row).validate()

    def run(k):
        try:
            return _solve_one(base, param_spec.names, draws[k], ode, n)
        except Exception as exc:
            vals = dict(zip(param_spec.names, draws[k].tolist()))
            raise type(exc)(f"kernel solve failed for sample {k} {vals}: {exc}") from exc

    if n_jobs == 1:
        grids = [run(k) for k in range(count)]
    else:
        from joblib import Parallel, delayed

        grids = Parallel(n_jobs=n_jobs)(delayed(run)(k) for k in range(count))
    return KernelDataset(param_spec, n, draws, grids, base, ode)


def save_dataset(ds: KernelDataset, path):
    doc = {
        "param_spec": ds.param_spec.to_dict(),
        "n": ds.n,
        "base": ds.base.to_dict(),
        "ode": ds.ode.to_dict(),
        "samples": [{"params": p.tolist(), "grid": grid_to_dict(g)} for p, g in zip(ds.params, ds.grids)],
    }
    Path(path).write_text(json.dumps(doc))


def load_dataset(path) -> KernelDataset:
    try:
        d = json.loads(Path(path).read_text())
        return KernelDataset(
            ParamSpec.from_dict(d["param_spec"]), int(d["n"]),
            np.array([s["params"] for s in d["samples"]], dtype=float),
            [grid_from_dict(s["grid"]) for s in d["samples"]],
            ModeParams.from_dict(d["base"]), _ode_from_dict(d["ode"]),
        )
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed dataset: {exc}") from None


@dataclass
class TrainConfig:
    """Hyperparameters.

    A mini-batch is ``batch_size`` parameter samples times a chunk of
    ``node_chunk`` mesh nodes (``None``: all nodes); one epoch visits every
    (sample, node) pair once.
    """

    p: int = 32
    hidden: tuple = (64, 64)
    lr: float = 3e-3
    lr_final: float = 1e-5
    epochs: int = 600
    batch_size: int = 16
    node_chunk: int | None = 256
    seed: int = 0
    val_fraction: float = 0.2


class OperatorModel:
    """Branch/trunk network with its normalization constants."""

    def __init__(self, param_spec: ParamSpec, p=32, hidden=(64, 64), rng=None,
                 base: ModeParams | None = None, ode: OdeMatrices | None = None):
        self.param_spec = param_spec
        self.p = int(p)
        self.hidden = tuple(int(h) for h in hidden)
        self.branch = MLP([param_spec.dim, *self.hidden, N_CH * self.p], rng)
        self.trunk = MLP([2, *self.hidden, N_CH * self.p], rng)
        self.bias = np.zeros(N_CH)
        self.out_mean = np.zeros(N_CH)
        self.out_std = np.ones(N_CH)
        self.base = base
        self.ode = ode
        self._hidden_cache = {}

    @property
    def params(self):
        return self.branch.params + self.trunk.params + [self.bias]

    def _invalidate(self):
        self._hidden_cache = {}

    # channel-first layouts: branch (6, S, p), trunk (6, T, p), prediction (6, S, T)
    def _branch(self, u_n, keep=False):
        out = self.branch.forward(u_n, keep)
        b, cache = out if keep else (out, None)
        return b.reshape(-1, N_CH, self.p).transpose(1, 0, 2), cache

    def _trunk(self, y_n, keep=False):
        out = self.trunk.forward(y_n, keep)
        t, cache = out if keep else (out, None)
        return t.reshape(-1, N_CH, self.p).transpose(1, 0, 2), cache

    def predict_normalized(self, u_n, y_n):
        """Raw network output (6, S, T) before output scaling."""
        B, _ = self._branch(np.atleast_2d(u_n))
        T, _ = self._trunk(np.atleast_2d(y_n))
        return B @ T.transpose(0, 2, 1) + self.bias[:, None, None]

    def predict(self, u, y):
        """Kernel channels (6, S, T) for parameters ``u`` (S, d) at points ``y`` (T, 2) in the triangle."""
        u_n = self.param_spec.normalize(np.atleast_2d(u))
        y_n = 2.0 * np.atleast_2d(np.asarray(y, dtype=float)) - 1.0
        raw = self.predict_normalized(u_n, y_n)
        return self.out_mean[:, None, None] + self.out_std[:, None, None] * raw

    def loss_and_grads(self, u_n, y_n, Y, mask, grads=True):
        """Masked mean squared error in kernel units and its gradients."""
        B, bcache = self._branch(u_n, keep=grads)
        T, tcache = self._trunk(y_n, keep=grads)
        raw = B @ T.transpose(0, 2, 1) + self.bias[:, None, None]
        std = self.out_std[:, None, None]
        err = (self.out_mean[:, None, None] + std * raw - Y) * mask[:, None, :]
        count = B.shape[1] * mask.sum()
        loss = float(np.sum(err * err) / count)
        if not grads:
            return loss, None
        G = (2.0 / count) * std * err
        dB = G @ T
        dT = G.transpose(0, 2, 1) @ B
        gb, _ = self.branch.backward(bcache, dB.transpose(1, 0, 2).reshape(B.shape[1], -1))
        gt, _ = self.trunk.backward(tcache, dT.transpose(1, 0, 2).reshape(T.shape[1], -1))
        return loss, gb + gt + [G.sum(axis=(1, 2))]

    def _hidden_features(self, n):
        feats = self._hidden_cache.get(n)
        if feats is None:
            y_n, _ = _trunk_nodes(n)
            feats = self.trunk.hidden(y_n)
            if len(self._hidden_cache) >= 2:
                self._hidden_cache.pop(next(iter(self._hidden_cache)))
            self._hidden_cache[n] = feats
        return feats

    def predict_mesh(self, u, n):
        """Channels (6, T) on all triangular nodes of an ``n``-mesh for one parameter vector.

        The trunk's last layer is linear, so it is folded into the branch
        coefficients and only the hidden trunk features touch every node;
        those are cached per mesh size because they do not depend on ``u``.
        """
        u_n = self.param_spec.normalize(np.atleast_2d(u))
        B, _ = self._branch(u_n)  # (6, 1, p)
        W = self.trunk.W[-1].reshape(-1, N_CH, self.p)  # (H, 6, p)
        b = self.trunk.b[-1].reshape(N_CH, self.p)
        V = np.einsum("hcp,cp->hc", W, B[:, 0, :])
        const = np.einsum("cp,cp->c", b, B[:, 0, :]) + self.bias
        raw = (self._hidden_features(n) @ V + const).T
        return self.out_mean[:, None] + self.out_std[:, None] * raw


def _split(count, val_fraction, rng):
    order = rng.permutation(count)
    n_val = int(round(val_fraction * count)) if count > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(ds: KernelDataset, hyper: TrainConfig | None = None, verbose=False):
    """Fit an :class:`OperatorModel` to a dataset.

    Samples are split 80/20 into training and validation sets.  Every
    mini-batch holds ``batch_size`` samples with all of their nodes.  The
    step size decays geometrically from ``lr`` to ``lr_final``.

    Returns
    -------
    model : OperatorModel
    history : dict
        Per-epoch ``train`` and ``val`` mean squared errors, the split
        indices and the wall time.

    Raises
    ------
    DivergenceError
        The loss became non-finite; the message names the epoch.
    """
    hyper = hyper or TrainConfig()
    rng = np.random.default_rng(hyper.seed)
    tr_idx, va_idx = _split(len(ds), hyper.val_fraction, rng)
    Y, mask = ds.targets()
    y_n, _ = _trunk_nodes(ds.n)
    u_n = ds.param_spec.normalize(ds.params)

    model = OperatorModel(ds.param_spec, hyper.p, hyper.hidden, rng, base=ds.base, ode=ds.ode)
    Ytr = Y[:, tr_idx]
    sel = np.broadcast_to(mask[:, None, :], Ytr.shape).astype(bool)
    for c in range(N_CH):
        vals = Ytr[c][sel[c]]
        model.out_mean[c] = vals.mean()
        model.out_std[c] = vals.std() if vals.std() > 1e-12 else 1.0

    opt = Adam(model.params, lr=hyper.lr)
    n_nodes = y_n.shape[0]
    chunk = n_nodes if hyper.node_chunk is None else min(int(hyper.node_chunk), n_nodes)
    n_sb = int(np.ceil(len(tr_idx) / hyper.batch_size))
    n_nb = int(np.ceil(n_nodes / chunk))
    steps_per_epoch = n_sb * n_nb
    total = max(1, hyper.epochs * steps_per_epoch - 1)
    decay = (hyper.lr_final / hyper.lr) ** (1.0 / total)
    history = {"train": [], "val": []}
    t0 = time.perf_counter()
    step = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(tr_idx)
        nodes = rng.permutation(n_nodes) if chunk < n_nodes else np.arange(n_nodes)
        for k in rng.permutation(steps_per_epoch):
            sb, nb = divmod(int(k), n_nb)
            batch = perm[sb * hyper.batch_size:(sb + 1) * hyper.batch_size]
            sel_nodes = nodes[nb * chunk:(nb + 1) * chunk]
            loss, grads = model.loss_and_grads(u_n[batch], y_n[sel_nodes], Y[:, batch][:, :, sel_nodes],
                                               mask[:, sel_nodes])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            opt.step(grads, hyper.lr * decay ** step)
            step += 1
        tr_loss = model.loss_and_grads(u_n[tr_idx], y_n, Y[:, tr_idx], mask, grads=False)[0]
        va_loss = (model.loss_and_grads(u_n[va_idx], y_n, Y[:, va_idx], mask, grads=False)[0]
                   if va_idx.size else float("nan"))
        if not np.isfinite(tr_loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        history["train"].append(tr_loss)
        history["val"].append(va_loss)
        if verbose and (epoch % 50 == 0 or epoch == hyper.epochs - 1):
            print(f"epoch {epoch:4d}  train {tr_loss:.3e}  val {va_loss:.3e}", flush=True)
    model._invalidate()
    history.update(train_idx=tr_idx.tolist(), val_idx=va_idx.tolist(), seconds=time.perf_counter() - t0,
                   hyper=asdict(hyper))
    return model, history


def evaluate_loss(model: OperatorModel, ds: KernelDataset, idx=None):
    """Masked mean squared error of ``model`` on (a subset of) ``ds``."""
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    Y, mask = ds.targets()
    y_n, _ = _trunk_nodes(ds.n)
    return model.loss_and_grads(ds.param_spec.normalize(ds.params[idx]), y_n, Y[:, idx], mask, grads=False)[0]


def infer(model: OperatorModel, params, n: int, check=True) -> KernelGrid:
    """Evaluate the operator on every node of an ``n``-mesh.

    Parameters
    ----------
    model : OperatorModel
    params : ModeParams or array_like
        Either a full parameter set or the values of the varied entries
        in ``model.param_spec`` order.
    n : int
        Mesh size.
    check : bool
        Run the (warning-only) grid invariant checks.

    Notes
    -----
    The diagonal condition and ``gamma(0) = K`` are not imposed; the
    result carries ``source="operator"``.
    """
    spec = model.param_spec
    if isinstance(params, ModeParams):
        values = params.values_of(spec.names)
        nominal = params
    else:
        values = np.ravel(np.asarray(params, dtype=float))
        if values.size != spec.dim:
            raise ValueError(f"expected {spec.dim} parameter values, got {values.size}")
        if model.base is None:
            raise ValueError("model has no base parameters; pass a ModeParams instead")
        nominal = model.base.with_values(spec.names, values)
    if np.any(values < np.asarray(spec.lo) - 1e-12) or np.any(values > np.asarray(spec.hi) + 1e-12):
        warnings.warn("operator queried outside its training range", RuntimeWarning, stacklevel=2)
    out = model.predict_mesh(values, n)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("operator produced non-finite kernel values")
    mesh = TriMesh(n)
    K = mesh.unpack(out[:3])
    N = mesh.unpack(out[3])
    a = mesh.indices()
    gamma = out[4:, a[1] == 0]
    ode = model.ode
    gain = np.asarray(ode.K if ode is not None else gamma[:, :1].T, dtype=float).reshape(1, 2)
    info = {} if ode is None else {"A": ode.A.tolist(), "B": ode.B.ravel().tolist(), "C": ode.C.tolist()}
    grid = KernelGrid(mesh=mesh, K=K, N=N, gamma=gamma, nominal=nominal, gain=gain, source="operator", info=info)
    if check:
        grid.validate()
    return grid


_MODEL_FORMAT = "mjbackstep-deeponet"


def _floats(a):
    # repr of a Python float is the shortest string that round-trips exactly
    return np.asarray(a, dtype=float).tolist()


def model_to_dict(model: OperatorModel):
    layers = [{"net": "branch", "W": _floats(W), "b": _floats(b)} for W, b in zip(model.branch.W, model.branch.b)]
    layers += [{"net": "trunk", "W": _floats(W), "b": _floats(b)} for W, b in zip(model.trunk.W, model.trunk.b)]
    return {
        "format": _MODEL_FORMAT,
        "arch": {"branch": model.branch.sizes, "trunk": model.trunk.sizes, "activation": "tanh",
                 "hidden": list(model.hidden)},
        "p": model.p,
        "channels": list(CHANNELS),
        "normalization": {"param_spec": model.param_spec.to_dict(), "out_mean": _floats(model.out_mean),
                          "out_std": _floats(model.out_std), "trunk": "2*y-1"},
        "layers": layers,
        "bias": _floats(model.bias),
        "base": None if model.base is None else model.base.to_dict(),
        "ode": None if model.ode is None else model.ode.to_dict(),
    }


def model_from_dict(d) -> OperatorModel:
    try:
        if d.get("format") != _MODEL_FORMAT:
            raise SchemaError("not an operator model file")
        if list(d["channels"]) != list(CHANNELS):
            raise SchemaError("unexpected channel layout")
        norm = d["normalization"]
        spec = ParamSpec.from_dict(norm["param_spec"])
        model = OperatorModel(
            spec, d["p"], d["arch"]["hidden"],
            base=None if d.get("base") is None else ModeParams.from_dict(d["base"]),
            ode=None if d.get("ode") is None else _ode_from_dict(d["ode"]),
        )
        if model.branch.sizes != list(d["arch"]["branch"]) or model.trunk.sizes != list(d["arch"]["trunk"]):
            raise SchemaError("layer sizes inconsistent with p and hidden widths")
        nets = {"branch": model.branch, "trunk": model.trunk}
        counters = {"branch": 0, "trunk": 0}
        for layer in d["layers"]:
            net = nets[layer["net"]]
            k = counters[layer["net"]]
            W = np.asarray(layer["W"], dtype=float)
            b = np.asarray(layer["b"], dtype=float)
            if W.shape != net.W[k].shape or b.shape != net.b[k].shape:
                raise SchemaError(f"{layer['net']} layer {k} has the wrong shape")
            net.W[k], net.b[k] = W, b
            counters[layer["net"]] += 1
        if counters["branch"] != len(model.branch.W) or counters["trunk"] != len(model.trunk.W):
            raise SchemaError("missing layers")
        model.bias = np.asarray(d["bias"], dtype=float).reshape(N_CH)
        model.out_mean = np.asarray(norm["out_mean"], dtype=float).reshape(N_CH)
        model.out_std = np.asarray(norm["out_std"], dtype=float).reshape(N_CH)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, ConfigError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from None
    if not all(np.all(np.isfinite(p)) for p in model.params + [model.out_mean, model.out_std]):
        raise SchemaError("model contains non-finite weights")
    return model


def save_model(model: OperatorModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> OperatorModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise SchemaError("model file must hold a JSON object")
    return model_from_dict(d)


class DeepONetKernelRegressor(BaseEstimator):
    """Estimator wrapper around :func:`train` and :func:`infer`.

    ``fit`` takes a :class:`KernelDataset` (targets are whole kernel grids,
    so there is no separate ``y``).  ``predict`` maps rows of varied
    parameter values to operator-produced :class:`KernelGrid` objects.

    Parameters
    ----------
    p, hidden, lr, lr_final, epochs, batch_size, seed
        See :class:`TrainConfig`.
    n : int or None
        Mesh for ``predict``; defaults to the training mesh.
    """

    def __init__(self, p=32, hidden=(64, 64), lr=1e-3, lr_final=1e-3, epochs=600, batch_size=16, seed=0, n=None):
        self.p = p
        self.hidden = hidden
        self.lr = lr
        self.lr_final = lr_final
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.n = n

    def fit(self, X: KernelDataset, y=None):
        if not isinstance(X, KernelDataset):
            raise TypeError("fit expects a KernelDataset")
        hyper = TrainConfig(p=self.p, hidden=tuple(self.hidden), lr=self.lr, lr_final=self.lr_final,
                            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)
        self.model_, self.history_ = train(X, hyper)
        self.train_n_ = X.n
        self.n_features_in_ = X.param_spec.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} parameter columns, got {X.shape[1]}")
        n = self.n or self.train_n_
        return [infer(self.model_, row, n, check=False) for row in X]

    def score(self, X: KernelDataset, y=None):
        """Negative masked mean squared error on a dataset."""
        check_is_fitted(self, "model_")
        return -evaluate_loss(self.model_, X)
