import json
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from mjbackstep.exceptions import DivergenceError, SchemaError
from mjbackstep.kernel_solver import solve_kernels
from mjbackstep.neural_operator import (
    DeepONetKernelRegressor,
    OperatorModel,
    ParamSpec,
    TrainConfig,
    _trunk_nodes,
    evaluate_loss,
    generate_dataset,
    infer,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    train,
)
from mjbackstep.nn import MLP, Adam


@pytest.fixture(scope="module")
def small_model(small_dataset):
    return train(small_dataset, TrainConfig(epochs=40, batch_size=4, node_chunk=16, seed=1))


def test_mlp_gradients_against_finite_differences(rng):
    net = MLP([2, 5, 3], rng)
    x = rng.normal(size=(4, 2))
    y, acts = net.forward(x, keep=True)
    grads, dx = net.backward(acts, np.ones_like(y))
    for P, G in zip(net.params, grads):
        idx = tuple(rng.integers(0, s) for s in P.shape)
        old = P[idx]
        P[idx] = old + 1e-6
        up = net.forward(x).sum()
        P[idx] = old - 1e-6
        down = net.forward(x).sum()
        P[idx] = old
        assert abs((up - down) / 2e-6 - G[idx]) <= 1e-7
    x2 = x.copy()
    x2[0, 1] += 1e-6
    assert abs((net.forward(x2).sum() - y.sum()) / 1e-6 - dx[0, 1]) <= 1e-5


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -2.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2 * (p - 1.0)])
    np.testing.assert_allclose(p, [1.0, 1.0], atol=1e-6)


def test_operator_loss_gradients(small_dataset, rng):
    m = OperatorModel(small_dataset.param_spec, p=3, hidden=(4, 4), rng=rng)
    m.out_mean[:] = 0.2
    m.out_std[:] = np.linspace(0.5, 3.0, 6)
    m.bias[:] = 0.1
    Y, mask = small_dataset.targets()
    y, _ = _trunk_nodes(small_dataset.n)
    u = small_dataset.param_spec.normalize(small_dataset.params[:3])
    loss, grads = m.loss_and_grads(u, y, Y[:, :3], mask)
    for P, G in zip(m.params, grads):
        fd = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + 1e-6
            lp = m.loss_and_grads(u, y, Y[:, :3], mask, grads=False)[0]
            P[idx] = old - 1e-6
            lm = m.loss_and_grads(u, y, Y[:, :3], mask, grads=False)[0]
            P[idx] = old
            fd[idx] = (lp - lm) / 2e-6
        assert np.linalg.norm(fd - G) <= 1e-4 * np.linalg.norm(G)


def test_param_spec_canonical_order_and_normalization():
    spec = ParamSpec(["Q[0]", "lambda_minus"], [0.0, 0.8], [2.0, 1.8])
    assert spec.names == ("lambda_minus", "Q[0]")
    u = np.array([[1.3, 0.5], [0.8, 2.0]])
    np.testing.assert_allclose(spec.normalize(u), [[0.0, -0.5], [-1.0, 1.0]])
    assert np.abs(spec.denormalize(spec.normalize(u)) - u).max() <= 1e-12
    with pytest.raises(ValueError):
        ParamSpec(["nope"], [0], [1])


def test_dataset_determinism_and_degenerate_range(cfg, lambda_spec):
    a = generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 4, 6, seed=5)
    b = generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 4, 6, seed=5)
    assert np.array_equal(a.params, b.params)
    assert np.all((a.params >= 0.8) & (a.params <= 1.8))
    one = generate_dataset(cfg.ode, cfg.nominal, ParamSpec(["lambda_minus"], [1.0], [1.0]), 1, 6, seed=0)
    ref = solve_kernels(cfg.nominal, cfg.ode, 6)
    assert np.array_equal(one.grids[0].K, ref.K) and np.array_equal(one.grids[0].N, ref.N)
    assert all(g.residuals.bc_diag <= 1e-10 for g in a.grids)


def test_dataset_parallel_matches_serial(cfg, lambda_spec):
    a = generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 3, 6, seed=2)
    b = generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 3, 6, seed=2, n_jobs=2)
    assert all(np.array_equal(x.N, y.N) for x, y in zip(a.grids, b.grids))


def test_dataset_file_roundtrip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "ds.json")
    back = load_dataset(tmp_path / "ds.json")
    assert np.array_equal(back.params, small_dataset.params)
    assert np.array_equal(back.grids[3].K, small_dataset.grids[3].K)
    doc = json.loads((tmp_path / "ds.json").read_text())
    assert set(doc) >= {"param_spec", "n", "samples"}


def test_deeponet_bilinear_form(small_model, rng):
    model, _ = small_model
    u = rng.uniform(0.8, 1.8, size=(1, 1))
    x = rng.uniform(0, 1, 10)
    y = np.column_stack([x, x * rng.uniform(0, 1, 10)])
    pred = model.predict(u, y)[:, 0, :]
    b = model.branch.forward(model.param_spec.normalize(u)).reshape(6, model.p)
    t = model.trunk.forward(2 * y - 1).reshape(10, 6, model.p)
    manual = model.out_mean[:, None] + model.out_std[:, None] * (np.einsum("ci,tci->ct", b, t) + model.bias[:, None])
    np.testing.assert_allclose(pred, manual, rtol=1e-12, atol=1e-12)


def test_mesh_prediction_matches_direct(small_model):
    model, _ = small_model
    grid = infer(model, [1.2], 9, check=False)
    x, xi = np.tril_indices(10)
    direct = model.predict([[1.2]], np.column_stack([x / 9, xi / 9]))[:, 0, :]
    np.testing.assert_allclose(grid.N[x, xi], direct[3], atol=1e-12)
    np.testing.assert_allclose(grid.gamma, direct[4:, xi == 0], atol=1e-12)
    assert grid.source == "operator"


def test_training_history_and_split(small_model, small_dataset):
    _, hist = small_model
    assert len(hist["train"]) == 40 and len(hist["val"]) == 40
    assert len(hist["val_idx"]) == round(0.2 * len(small_dataset))
    assert not set(hist["val_idx"]) & set(hist["train_idx"])


@pytest.mark.slow
def test_loss_decreases_over_windows(trained):
    _, hist = trained
    windows = np.asarray(hist["train"][10:]).reshape(-1, 5).mean(axis=1)
    assert np.all(np.diff(windows) <= 0)


def test_training_is_deterministic(small_dataset):
    cfg = TrainConfig(epochs=3, batch_size=4, node_chunk=16, seed=4)
    a, ha = train(small_dataset, cfg)
    b, hb = train(small_dataset, cfg)
    assert ha["train"] == hb["train"]
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


def test_single_sample_overfit(cfg):
    # plain Adam needs a long, aggressive schedule: the trunk features are poorly conditioned
    ds = generate_dataset(cfg.ode, cfg.nominal, ParamSpec(["lambda_minus"], [1.0], [1.0]), 1, 4, seed=0)
    _, hist = train(ds, TrainConfig(epochs=40000, batch_size=1, node_chunk=None, lr=3e-2, lr_final=1e-6,
                                    val_fraction=0.0))
    assert hist["train"][-1] <= 1e-8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(small_dataset):
    with pytest.raises(DivergenceError, match="epoch"):
        train(small_dataset, TrainConfig(epochs=5, lr=1e200, lr_final=1e200, batch_size=4))


def test_model_roundtrip(tmp_path, small_model, small_dataset, rng):
    model, _ = small_model
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert all(np.array_equal(p, q) for p, q in zip(model.params, back.params))
    y = np.sort(rng.uniform(0, 1, size=(100, 2)), axis=1)[:, ::-1]
    np.testing.assert_array_equal(model.predict([[1.1]], y), back.predict([[1.1]], y))
    assert evaluate_loss(model, small_dataset) == evaluate_loss(back, small_dataset)
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) >= {"arch", "normalization", "layers", "p", "channels"}


def test_model_schema_errors(tmp_path, small_model):
    model, _ = small_model
    save_model(model, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(SchemaError):
        load_model(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["layers"][0]["W"][0][0] = float("nan")
    (tmp_path / "nan.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="non-finite"):
        load_model(tmp_path / "nan.json")
    del doc["layers"][-1]
    (tmp_path / "short.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_model(tmp_path / "short.json")


def test_infer_warnings(small_model, cfg):
    model, _ = small_model
    with pytest.warns(RuntimeWarning, match="training range"):
        infer(model, [2.5], 8, check=False)
    with pytest.warns(RuntimeWarning, match="operator kernel grid"):
        infer(model, cfg.nominal, 8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        infer(model, [1.0], 8, check=False)


@pytest.mark.slow
def test_recall_and_holdout(trained, full_dataset, cfg):
    model, hist = trained
    k = hist["train_idx"][0]
    ref = full_dataset.grids[k]
    pred = infer(model, full_dataset.params[k], ref.n, check=False)
    assert np.abs(np.tril(pred.N - ref.N)).max() <= 1e-2
    held = solve_kernels(cfg.nominal.with_values(["lambda_minus"], [1.05]), cfg.ode, 50)
    pred = infer(model, [1.05], 50, check=False)
    assert np.abs(pred.K - held.K).max() <= 1e-2 and np.abs(pred.gamma - held.gamma).max() <= 1e-2


def test_sklearn_estimator(small_dataset):
    est = DeepONetKernelRegressor(p=4, hidden=(8, 8), epochs=5, batch_size=4, seed=2)
    assert est.get_params()["p"] == 4
    twin = clone(est).set_params(epochs=2)
    assert twin.epochs == 2 and est.epochs == 5
    with pytest.raises(Exception):
        est.predict([[1.0]])
    est.fit(small_dataset)
    grids = est.predict([[1.0], [1.5]])
    assert len(grids) == 2 and grids[0].n == small_dataset.n
    assert est.score(small_dataset) <= 0
    with pytest.raises(ValueError):
        est.predict([[1.0, 2.0]])
