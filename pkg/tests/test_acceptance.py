"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as each test finishes (visible with ``-s``) and again
in the terminal summary.
"""

import contextlib
import json
import time
from pathlib import Path

import numpy as np
from care_cases import random_problem
from gradcheck import check_layer, check_softmax_xent, random_layer
from scenarios import BUILDERS, release_violations

from handover import classifiers, cli, geometry
from handover.control import LqrProblem, care_residual, solve_care
from handover.robot_sim import SafetyEnvelope
from handover.simulation import check_safety, read_trajectory

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).resolve().parent / "golden"
DEFAULT_CONFIG = ROOT / "configs" / "default.json"

RESULTS: dict = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    notes: list = []
    try:
        yield notes
    except BaseException:
        RESULTS[number] = f"FAIL criterion {number}: {title}" + (f" ({'; '.join(notes)})" if notes else "")
        print(RESULTS[number])
        raise
    RESULTS[number] = f"PASS criterion {number}: {title}" + (f" ({'; '.join(notes)})" if notes else "")
    print(RESULTS[number])


def _accuracy_gate(number, kind, trained, floor, budget_s):
    with criterion(number, f"{kind} held-out accuracy >= {floor}") as notes:
        start = time.perf_counter()
        cm = classifiers.evaluate(trained.bundle, trained.heldout.x, trained.heldout.y)
        seconds = trained.seconds + time.perf_counter() - start
        notes.append(f"accuracy {cm.accuracy:.4f} on {cm.total}, {seconds:.0f} s")
        assert cm.accuracy >= floor
        assert seconds < budget_s


def test_criterion_1_gesture_accuracy(gesture_model):
    _accuracy_gate(1, "gesture", gesture_model, 0.94, 5 * 60)


def test_criterion_2_movement_accuracy(movement_model):
    _accuracy_gate(2, "movement", movement_model, 0.97, 15 * 60)


# criterion 3 -----------------------------------------------------------------


def _oracle_rotation(axis, angle):
    # Rodrigues, written out independently of the package
    x, y, z = axis / np.linalg.norm(axis)
    c, s, C = np.cos(angle), np.sin(angle), 1 - np.cos(angle)
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _oracle_homogeneous(R, t):
    H = np.zeros((4, 4))
    for i in range(3):
        for j in range(3):
            H[i, j] = R[i, j]
        H[i, 3] = t[i]
    H[3, 3] = 1.0
    return H


def _oracle_pixel_to_base(fx, fy, uc, vc, u, v, d, H_eye, H_ee):
    K_inv = np.array([[1 / fx, 0, -uc / fx], [0, 1 / fy, -vc / fy], [0, 0, 1]])
    p_cam = K_inv @ np.array([u * d, v * d, d])
    return (H_ee @ H_eye @ np.append(p_cam, 1.0))[:3]


def test_criterion_3_deprojection_chain_oracle():
    with criterion(3, "1000 pixel/transform cases match a 4x4 homogeneous oracle within 1e-9") as notes:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            w, h = int(rng.integers(160, 1921)), int(rng.integers(120, 1081))
            fx, fy = rng.uniform(100, 2000, size=2)
            uc, vc = rng.uniform(0, w), rng.uniform(0, h)
            u, v = rng.uniform(0, w), rng.uniform(0, h)
            d = rng.uniform(0.05, 5.0)
            Rs = [_oracle_rotation(rng.normal(size=3), rng.uniform(-np.pi, np.pi)) for _ in range(2)]
            ts = [rng.uniform(-2, 2, size=3) for _ in range(2)]
            got = geometry.pixel_to_base(
                geometry.CameraIntrinsics(fx, fy, uc, vc, w, h), geometry.PixelObservation(u, v, d),
                geometry.RigidTransform(Rs[0], ts[0]), geometry.RigidTransform(Rs[1], ts[1]),
            )
            want = _oracle_pixel_to_base(fx, fy, uc, vc, u, v, d, _oracle_homogeneous(Rs[0], ts[0]),
                                         _oracle_homogeneous(Rs[1], ts[1]))
            worst = max(worst, float(np.abs(got - want).max()))
        notes.append(f"worst abs error {worst:.2e}")
        assert worst < 1e-9


def test_criterion_4_care():
    with criterion(4, "CARE residual < 1e-8 on 100 random problems; A=0,B=Q=R=I gives P=K=I") as notes:
        rng = np.random.default_rng(77)
        worst = 0.0
        for _ in range(100):
            prob = random_problem(rng)
            gain = solve_care(prob)
            res = float(np.linalg.norm(care_residual(prob.A, prob.B, prob.Q, prob.R, gain.P)))
            worst = max(worst, res)
        notes.append(f"worst residual {worst:.2e}")
        assert worst < 1e-8
        closed = solve_care(LqrProblem(np.zeros((3, 3)), np.eye(3), np.eye(3), np.eye(3)))
        np.testing.assert_allclose(closed.P, np.eye(3), rtol=0, atol=1e-9)
        np.testing.assert_allclose(closed.K, np.eye(3), rtol=0, atol=1e-9)


def test_criterion_5_gradient_checks():
    with criterion(5, "analytic gradients match central differences within 1e-5 (20+ trials per layer)") as notes:
        rng = np.random.default_rng(5)
        worst = {}
        for kind in ("dense", "lstm", "conv1d"):
            worst[kind] = max(check_layer(*random_layer(kind, rng), rng) for _ in range(25))
        worst["softmax_xent"] = max(check_softmax_xent(rng) for _ in range(25))
        notes.append(", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
        assert max(worst.values()) < 1e-5


def test_criterion_6_step_response_golden(tmp_path):
    with criterion(6, "LQR step has zero overshoot, PID metrics reported, golden CSVs regenerate identically") as notes:
        cfg = json.loads(DEFAULT_CONFIG.read_text())
        assert cfg["controller"]["pid"] == {"kp": 0.1, "ki": 0.0, "kd": 0.2}
        assert cli.main(["step-response", "--config", str(DEFAULT_CONFIG), "--out", str(tmp_path)]) == 0
        for name in ("step_lqr.csv", "step_pid.csv"):
            assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        lqr, pid = metrics["lqr"], metrics["pid"]
        assert lqr["overshoot"] == 0.0
        lqr_err = np.loadtxt(tmp_path / "step_lqr.csv", delimiter=",", skiprows=1, usecols=(1, 2, 3))
        norms = np.linalg.norm(lqr_err, axis=1)
        assert np.all(np.diff(norms) <= 0)
        for key in ("overshoot", "settling_time_5pct"):
            assert pid[key] is not None
        notes.append(f"LQR settles in {lqr['settling_time_5pct']:.2f} s, PID in {pid['settling_time_5pct']:.2f} s "
                     f"with overshoot {pid['overshoot']:.3g}")


def _log_lines(run):
    return [json.loads(line) for line in (run.out_dir / "session_log.jsonl").read_text().splitlines()]


def test_criterion_7_safety_invariants(suite_runs):
    with criterion(7, f"safety invariants hold over all {len(BUILDERS)} scenarios") as notes:
        assert len(suite_runs) >= 10
        env, dt = SafetyEnvelope(), 1.0 / 15.0
        lines = 0
        for name, run in suite_runs.items():
            rows = read_trajectory(run.out_dir / "trajectory.csv")
            lines += len(rows)
            assert check_safety(rows, env, dt) == [], name
            log = _log_lines(run)
            lines += len(log)
            stopped_at = next((e["tick"] for e in log if e.get("to") == "stopped"), None)
            if stopped_at is not None:
                # latch: nothing moves or changes state once stopped
                later = [e for e in log if e["tick"] > stopped_at]
                assert not [e for e in later if e["event"] in ("transition", "directive")], name
            for e in log:
                if e["event"] == "safety":
                    assert e["kind"] in ("wall_clamp", "velocity_clamp", "accel_clamp", "collision_stop"), name
        notes.append(f"{lines} log lines checked")


def test_criterion_8_end_to_end(suite_runs):
    with criterion(8, "repair sequence delivers under the release rule; go_away and collision variants") as notes:
        repair, go_away, collision = suite_runs["repair"], suite_runs["go_away"], suite_runs["collision"]
        seconds = repair.seconds + go_away.seconds + collision.seconds
        notes.append(f"{seconds:.1f} s for the three runs")
        assert repair.result.session.delivered == ["desoldering_pump", "soldering_wire", "wire_cutter"]
        assert repair.result.session.state == "idle"
        rows = read_trajectory(repair.out_dir / "trajectory.csv")
        assert release_violations(rows, SafetyEnvelope().home) == []
        assert sum(1 for e in _log_lines(repair) if e["event"] == "release_check") == 3
        assert any(e.get("to") == "returning" and e["reason"] == "go_away" for e in _log_lines(go_away))
        assert collision.result.session.state == "stopped"
        assert seconds < 30


def _snapshot(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "every subcommand is byte-identical across two runs") as notes:
        def run_all(root: Path):
            data = root / "data"
            models = root / "models"
            calls = [
                ["gen-data", "--kind", "gesture", "--n", "20", "--seed", "4", "--out", str(data)],
                ["gen-data", "--kind", "movement", "--n", "8", "--seed", "4", "--out", str(data)],
                ["gen-data", "--kind", "scenario", "--variant", "go_away", "--seed", "4", "--out", str(root / "scn")],
                ["train-gesture", "--data", str(data), "--epochs", "5", "--seed", "4", "--out", str(models)],
                ["train-movement", "--data", str(data), "--epochs", "2", "--seed", "4", "--out", str(models)],
                ["eval", "--kind", "movement", "--model", str(models / "movement_model.json"), "--data", str(data),
                 "--out", str(root / "eval")],
                ["step-response", "--out", str(root / "step")],
                ["simulate", "--scenario", str(root / "scn" / "scenario.jsonl"),
                 "--gesture-model", str(models / "gesture_model.json"),
                 "--movement-model", str(models / "movement_model.json"), "--out", str(root / "sim")],
                ["replay", "--stream", str(data / "movement.jsonl"),
                 "--gesture-model", str(models / "gesture_model.json"),
                 "--movement-model", str(models / "movement_model.json"), "--out", str(root / "replay")],
            ]
            for argv in calls:
                # the small models need not satisfy the scenario script (exit 4)
                assert cli.main(argv) in ((0, 4) if argv[0] == "simulate" else (0,)), argv[0]
            return _snapshot(root)

        a, b = run_all(tmp_path / "a"), run_all(tmp_path / "b")
        assert list(a) == list(b)
        differ = [name for name in a if a[name] != b[name]]
        notes.append(f"{len(a)} files compared")
        assert differ == []

