import contextlib
from dataclasses import replace

import numpy as np
import pytest

from mjbackstep.kernel_solver import solve_kernels
from mjbackstep.neural_operator import ParamSpec, TrainConfig, generate_dataset, train
from mjbackstep.params import GridSpec, load_bundled_config

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        status, title, detail = results[num]
        terminalreporter.write_line(f"[{status}] {num:2d}. {title}: {detail}")


@pytest.fixture
def criterion(request):
    """Context manager recording PASS/FAIL for one acceptance criterion."""
    results = request.config.stash[_RESULTS]

    @contextlib.contextmanager
    def record(num, title):
        info = {"detail": ""}
        try:
            yield info
        except BaseException as exc:
            msg = str(exc).strip().splitlines()
            reason = (msg[0] if msg else type(exc).__name__)[:200]
            results[num] = ("FAIL", title, f"{info['detail']} ({reason})" if info["detail"] else reason)
            raise
        else:
            results[num] = ("PASS", title, info["detail"])

    return record


@pytest.fixture(scope="session")
def cfg():
    return load_bundled_config()


@pytest.fixture(scope="session")
def short_cfg(cfg):
    """Bundled scenario on a coarse grid and a short horizon."""
    return replace(cfg, grid=GridSpec(nx=40, cfl=0.5, t_end=2.0, max_snapshots=50))


@pytest.fixture(scope="session")
def grid200(cfg):
    return solve_kernels(cfg.nominal, cfg.ode, 200)


@pytest.fixture(scope="session")
def lambda_spec():
    return ParamSpec(["lambda_minus"], [0.8], [1.8])


@pytest.fixture(scope="session")
def full_dataset(cfg, lambda_spec):
    return generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 500, 50, seed=7)


@pytest.fixture(scope="session")
def trained(full_dataset):
    """Default architecture, 600 epochs on the 500-sample dataset."""
    import time

    t0 = time.perf_counter()
    model, history = train(full_dataset, TrainConfig(epochs=600))
    history["wall"] = time.perf_counter() - t0
    return model, history


@pytest.fixture(scope="session")
def small_dataset(cfg, lambda_spec):
    return generate_dataset(cfg.ode, cfg.nominal, lambda_spec, 12, 8, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
