"""``handover`` command line: data, training, evaluation, step response,
simulation and replay.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 scenario expectation not met.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import classifiers, datagen, geometry, simulation
from .control import ControllerConfig, step_response
from .landmarks import LandmarkParseError, StreamError, parse_stream
from .neurnet import BundleError, models, training

log = logging.getLogger("handover")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SCENARIO = 0, 2, 3, 4
DEFAULT_EPOCHS = {"gesture": 40, "movement": 30}
HELDOUT_SEED_OFFSET = 1000


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _labels(kind: str):
    return datagen.GESTURE_LABELS if kind == "gesture" else datagen.MOVEMENT_LABELS


def _generate(kind: str, n: int, seed: int):
    if kind == "gesture":
        return datagen.gen_gesture_set(n_per_class=n, seed=seed)
    return datagen.gen_movement_set(n_per_class=n, seed=seed)


def _read_data(kind: str, path) -> datagen.LabeledSet:
    path = Path(path)
    jsonl = path / f"{kind}.jsonl" if path.is_dir() else path
    labels_csv = jsonl.with_name(jsonl.stem + "_labels.csv")
    for p in (jsonl, labels_csv):
        if not p.is_file():
            raise CliError(f"data file {p} not found", EXIT_CONFIG)
    try:
        ds = datagen.read_set(jsonl, labels_csv, _labels(kind))
    except LandmarkParseError as exc:
        raise CliError(f"{jsonl}: {exc}", EXIT_DATA) from None
    except (StreamError, datagen.DatasetError) as exc:
        raise CliError(f"{jsonl}: {exc}", EXIT_DATA) from None
    want = 2 if kind == "gesture" else 3
    if ds.x.ndim != want:
        raise CliError(f"{jsonl}: samples do not look like {kind} data", EXIT_DATA)
    return ds


def _load_bundle(path, labels):
    if not Path(path).is_file():
        raise CliError(f"model file {path} not found", EXIT_CONFIG)
    try:
        with open(path) as fh:
            bundle = training.load(fh)
    except BundleError as exc:
        raise CliError(f"{path}: {exc}", EXIT_CONFIG) from None
    if tuple(bundle.labels) != tuple(labels):
        raise CliError(f"{path}: model labels {list(bundle.labels)} do not match {list(labels)}", EXIT_CONFIG)
    return bundle


def _load_json(path, what: str) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"{what} file {path} not found", EXIT_CONFIG) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc.msg})", EXIT_CONFIG) from None


def _sim_config(args) -> simulation.SimConfig:
    calib = None
    if getattr(args, "calibration", None):
        try:
            calib = geometry.Calibration.from_dict(_load_json(args.calibration, "calibration"))
        except geometry.DomainError as exc:
            raise CliError(f"{args.calibration}: {exc}", EXIT_CONFIG) from None
    try:
        cfg = simulation.SimConfig.from_dict(_load_json(args.config, "config"), calib)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad config: {exc}", EXIT_CONFIG) from None
    if getattr(args, "camera_mount", None):
        cfg = replace(cfg, camera_mount=args.camera_mount)
    return cfg


# subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.kind == "scenario":
        path = simulation.repair_scenario(args.variant, seed=args.seed).write(out)
        print(f"wrote {path}")
        return EXIT_OK
    n = args.n if args.n is not None else (1000 if args.kind == "gesture" else 600)
    if n < 1:
        raise CliError("--n must be at least 1", EXIT_CONFIG)
    ds = _generate(args.kind, n, args.seed)
    jsonl, labels_csv = datagen.write_set(ds, out, args.kind)
    print(f"wrote {len(ds)} samples to {jsonl} and {labels_csv}")
    return EXIT_OK


def _train(kind: str, args) -> int:
    out = Path(args.out)
    if args.data:
        train_set = _read_data(kind, args.data)
    else:
        n = args.n if args.n is not None else (1000 if kind == "gesture" else 600)
        train_set = _generate(kind, n, args.seed)
    if args.heldout:
        test_set = _read_data(kind, args.heldout)
    else:
        n = args.n if args.n is not None else (1000 if kind == "gesture" else 600)
        test_set = _generate(kind, max(1, n // 3), args.seed + HELDOUT_SEED_OFFSET)
    arch = models.gesture_architecture() if kind == "gesture" else models.movement_architecture()
    epochs = DEFAULT_EPOCHS[kind] if args.epochs is None else args.epochs
    if epochs < 0:
        raise CliError("--epochs must be nonnegative", EXIT_CONFIG)
    try:
        bundle = training.train(arch, train_set.x, train_set.y, list(train_set.labels), lr=args.lr,
                                epochs=epochs, batch=args.batch, seed=args.seed)
    except training.TrainingDivergedError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / f"{kind}_model.json"
    with model_path.open("w") as fh:
        training.save(bundle, fh)
    cm = classifiers.evaluate(bundle, test_set.x, test_set.y)
    cm.write(out, f"{kind}_eval")
    print(f"wrote {model_path}; held-out accuracy {cm.accuracy:.4f} on {cm.total} samples")
    return EXIT_OK


def cmd_train_gesture(args) -> int:
    return _train("gesture", args)


def cmd_train_movement(args) -> int:
    return _train("movement", args)


def cmd_eval(args) -> int:
    kind = args.kind
    bundle = _load_bundle(args.model, _labels(kind))
    ds = _read_data(kind, args.data)
    cm = classifiers.evaluate(bundle, ds.x, ds.y)
    paths = cm.write(args.out, f"{kind}_eval")
    print(f"accuracy {cm.accuracy:.4f} on {cm.total} samples; wrote {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def cmd_step_response(args) -> int:
    try:
        cfg = ControllerConfig.from_dict(_load_json(args.config, "config").get("controller", {}))
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad controller config: {exc}", EXIT_CONFIG) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = {}
    for mode in ("lqr", "pid"):
        resp = step_response(cfg, mode, offset=tuple(args.offset), duration=args.duration)
        with (out / f"step_{mode}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "ex", "ey", "ez", "ux", "uy", "uz", "mode"])
            for row in resp.rows():
                w.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])
        metrics[mode] = resp.metrics()
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    for mode, m in metrics.items():
        print(f"{mode}: overshoot {m['overshoot']:.4g}, settling (5%) {m['settling_time_5pct']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    gesture = _load_bundle(args.gesture_model, classifiers.GESTURE_NET_LABELS)
    movement = _load_bundle(args.movement_model, classifiers.MOVEMENT_LABELS)
    if not Path(args.scenario).is_file():
        raise CliError(f"scenario file {args.scenario} not found", EXIT_CONFIG)
    try:
        scenario = simulation.load_scenario(args.scenario)
    except (simulation.ScenarioError, LandmarkParseError, StreamError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    result = simulation.run(scenario, gesture, movement, cfg, realtime=args.realtime)
    traj, events = simulation.write_outputs(result, args.out)
    print(f"wrote {traj} and {events}; final state {result.session.state}, delivered {result.session.delivered}")
    if not result.ok:
        for f in result.failures:
            print(f"expectation failed: {f}", file=sys.stderr)
        return EXIT_SCENARIO
    return EXIT_OK


REPLAY_COLUMNS = ["t", "hand_present", "gesture", "gesture_p", "gesture_actionable", "urgency", "urgency_p",
                  "urgency_actionable", "palm_x", "palm_y", "palm_z"]


def cmd_replay(args) -> int:
    cfg = _sim_config(args)
    gesture = _load_bundle(args.gesture_model, classifiers.GESTURE_NET_LABELS)
    movement = _load_bundle(args.movement_model, classifiers.MOVEMENT_LABELS)
    try:
        with open(args.stream) as fh:
            frames = parse_stream(fh)
    except FileNotFoundError:
        raise CliError(f"stream file {args.stream} not found", EXIT_CONFIG) from None
    except (LandmarkParseError, StreamError) as exc:
        raise CliError(f"{args.stream}: {exc}", EXIT_DATA) from None
    perceiver = simulation.Perceiver(gesture, movement, cfg.dt, cfg.gate_threshold, cfg.gate_ticks)
    calib = cfg.calibration
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "replay.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLAY_COLUMNS)
        for f in frames:
            p = perceiver.update(f)
            palm = ["", "", ""]
            if f.targetable:
                try:
                    palm = [repr(float(v)) for v in geometry.pixel_to_base(
                        calib.intrinsics, f.palm_pixel, calib.eye_to_hand, calib.ee_to_base)]
                except geometry.DomainError:
                    pass
            w.writerow([repr(f.t), int(p.hand_present), p.gesture, repr(p.gesture_p), p.gesture_actionable or "",
                        p.urgency or "", repr(p.urgency_p), p.urgency_actionable or "", *palm])
    print(f"wrote {path} ({len(frames)} frames)")
    return EXIT_OK


# parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="handover", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset or scenario")
    p.add_argument("--kind", choices=("gesture", "movement", "scenario"), required=True)
    p.add_argument("--n", type=int, help="samples per class (default 1000 gesture, 600 movement)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=("repair", "go_away", "collision"), default="repair",
                   help="scenario variant (--kind scenario)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for kind, func in (("gesture", cmd_train_gesture), ("movement", cmd_train_movement)):
        p = sub.add_parser(f"train-{kind}", help=f"train the {kind} network")
        p.add_argument("--data", help=f"dataset dir or {kind}.jsonl (default: generate)")
        p.add_argument("--heldout", help="held-out dataset (default: generate with a disjoint seed)")
        p.add_argument("--n", type=int, help="samples per class when generating")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float, default=0.05)
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="confusion matrix of a model on a dataset")
    p.add_argument("--kind", choices=("gesture", "movement"), required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("step-response", help="LQR vs PID response to a unit step")
    p.add_argument("--config", help="JSON run config (its 'controller' section is used)")
    p.add_argument("--offset", type=float, nargs=3, default=(1.0, 0.0, 0.0))
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_step_response)

    for name, func, help_ in (("simulate", cmd_simulate, "run a scenario through the tick loop"),
                              ("replay", cmd_replay, "classify a recorded landmark stream")):
        p = sub.add_parser(name, help=help_)
        if name == "simulate":
            p.add_argument("--scenario", required=True)
            p.add_argument("--realtime", action="store_true", help="sleep to hold the tick rate")
        else:
            p.add_argument("--stream", required=True)
        p.add_argument("--gesture-model", required=True)
        p.add_argument("--movement-model", required=True)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--calibration", help="calibration JSON (default: overhead camera)")
        p.add_argument("--camera-mount", choices=("static", "wrist"))
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
