import time
from dataclasses import dataclass

import numpy as np
import pytest

from handover import datagen
from handover.neurnet import gesture_architecture, movement_architecture, train

TRAIN_SEED = 0
HELDOUT_SEED = 1000
EPOCHS = {"gesture": 40, "movement": 30}


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@dataclass
class Trained:
    bundle: object
    heldout: datagen.LabeledSet
    seconds: float  # wall time of data generation plus training


@pytest.fixture(scope="session")
def gesture_model() -> Trained:
    start = time.perf_counter()
    data = datagen.gen_gesture_set(seed=TRAIN_SEED)
    bundle = train(gesture_architecture(), data.x, data.y, list(data.labels), epochs=EPOCHS["gesture"],
                   seed=TRAIN_SEED)
    seconds = time.perf_counter() - start
    return Trained(bundle, datagen.gen_gesture_set(seed=HELDOUT_SEED), seconds)


@pytest.fixture(scope="session")
def movement_model() -> Trained:
    start = time.perf_counter()
    data = datagen.gen_movement_set(seed=TRAIN_SEED)
    bundle = train(movement_architecture(), data.x, data.y, list(data.labels), epochs=EPOCHS["movement"],
                   seed=TRAIN_SEED)
    seconds = time.perf_counter() - start
    return Trained(bundle, datagen.gen_movement_set(seed=HELDOUT_SEED), seconds)


@dataclass
class SuiteRun:
    scenario_path: object
    out_dir: object
    result: object
    seconds: float  # wall time of the tick loop alone


@pytest.fixture(scope="session")
def suite_runs(tmp_path_factory, gesture_model, movement_model) -> dict:
    """Every scenario of the shared suite, run once with outputs on disk."""
    from scenarios import build_suite

    from handover import simulation

    root = tmp_path_factory.mktemp("suite")
    runs = {}
    for name, path in build_suite(root / "scenarios").items():
        scenario = simulation.load_scenario(path)
        start = time.perf_counter()
        result = simulation.run(scenario, gesture_model.bundle, movement_model.bundle)
        seconds = time.perf_counter() - start
        out = root / "runs" / name
        simulation.write_outputs(result, out)
        runs[name] = SuiteRun(path, out, result, seconds)
    return runs


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
