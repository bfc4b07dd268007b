"""Offline 15 Hz tick loop: landmarks -> classifiers -> supervisor -> robot -> workflow.

Scenario scripts are JSON lines ``{"t": <s>, "kind": ..., "payload": {...}}``:

``command``                ``{"text": "bring the wire cutter"}``
``collision``              ``{}``; the contact sensor fires on that tick
``landmark_file_segment``  ``{"path": "seg.jsonl"}``; frames replayed from ``t``
                           on, one per tick, path relative to the script
``expect``                 ``{"state": "idle", "delivered": [...], "holding": null,
                           "at_home": true}``; checked after the run
``end``                    ``{}``; stop at ``t`` instead of running to quiescence
"""

from __future__ import annotations

import csv
import json
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datagen, geometry
from .classifiers import ConfidenceGate, classify_gesture, classify_movement
from .control import ControlCommand, ControllerConfig, Supervisor
from .geometry import Calibration, DomainError, RigidTransform
from .landmarks import WINDOW_LEN, LandmarkFrame, dump_stream, normalize, parse_stream
from .robot_sim import EndEffectorState, SafetyEnvelope
from .robot_sim import step as robot_step
from .workflow import FsmConfig, FsmInputs, Session, parse_command

SCENARIO_KINDS = ("command", "collision", "landmark_file_segment", "expect", "end")
TRAJECTORY_COLUMNS = ["tick", "t", "x", "y", "z", "vx", "vy", "vz", "mode", "urgency", "events", "state", "holding",
                      "gesture", "tx", "ty", "tz"]
SETTLE_S = 120.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScenarioEntry:
    t: float
    kind: str
    payload: dict


@dataclass(eq=False)
class Scenario:
    entries: list
    segments: dict = field(default_factory=dict)  # entry index -> list[LandmarkFrame]

    @property
    def expectation(self) -> dict:
        exp = [e.payload for e in self.entries if e.kind == "expect"]
        return exp[-1] if exp else {"state": "idle"}

    @property
    def end_t(self) -> float | None:
        ends = [e.t for e in self.entries if e.kind == "end"]
        return min(ends) if ends else None


def load_scenario(path) -> Scenario:
    path = Path(path)
    entries, segments = [], {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or rec.get("kind") not in SCENARIO_KINDS:
            raise ScenarioError(f"{path}:{line_no}: unknown entry kind {rec.get('kind') if isinstance(rec, dict) else rec!r}")
        t = rec.get("t")
        if not isinstance(t, (int, float)) or isinstance(t, bool) or t < 0:
            raise ScenarioError(f"{path}:{line_no}: 't' must be a nonnegative number")
        payload = rec.get("payload", {}) or {}
        entry = ScenarioEntry(float(t), rec["kind"], payload)
        if entry.kind == "landmark_file_segment":
            seg_path = path.parent / payload.get("path", "")
            if not seg_path.is_file():
                raise ScenarioError(f"{path}:{line_no}: segment file {seg_path} not found")
            with seg_path.open() as fh:
                segments[len(entries)] = parse_stream(fh)
        elif entry.kind == "command" and not isinstance(payload.get("text"), str):
            raise ScenarioError(f"{path}:{line_no}: command payload needs 'text'")
        entries.append(entry)
    return Scenario(entries, segments)


@dataclass(frozen=True)
class Perception:
    """One tick of classifier output."""

    hand_present: bool
    gesture: str
    gesture_p: float
    gesture_actionable: str | None
    urgency: str | None
    urgency_p: float
    urgency_actionable: str | None


class Perceiver:
    """Gesture per frame, movement on the latest 30 contiguous frames, both
    passed through a confidence gate."""

    def __init__(self, gesture_model, movement_model, dt: float, threshold: float = 0.7, ticks: int = 3):
        self.gesture_model = gesture_model
        self.movement_model = movement_model
        self.dt = dt
        self.gesture_gate = ConfidenceGate(threshold, ticks)
        self.urgency_gate = ConfidenceGate(threshold, ticks)
        self.buffer = deque(maxlen=WINDOW_LEN)

    def update(self, frame: LandmarkFrame | None) -> Perception:
        if frame is None or not frame.hand_present:
            self.buffer.clear()
            self.urgency_gate.reset()
            label, probs = classify_gesture(self.gesture_model, None)
            return Perception(False, label, 1.0, self.gesture_gate.update(label, 1.0), None, 0.0, None)
        pose = normalize(frame)
        label, probs = classify_gesture(self.gesture_model, pose)
        g_act = self.gesture_gate.update(label, probs[label])
        if self.buffer and frame.t - self.buffer[-1][0] > 2 * self.dt + 1e-9:
            self.buffer.clear()
            self.urgency_gate.reset()
        self.buffer.append((frame.t, pose))
        urgency, u_p, u_act = None, 0.0, None
        if len(self.buffer) == WINDOW_LEN:
            window = np.stack([p for _, p in self.buffer])
            urgency, uprobs = classify_movement(self.movement_model, window)
            u_p = uprobs[urgency]
            u_act = self.urgency_gate.update(urgency, u_p)
        return Perception(True, label, probs[label], g_act, urgency, u_p, u_act)


@dataclass(frozen=True, eq=False)
class SimConfig:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    envelope: SafetyEnvelope = field(default_factory=SafetyEnvelope)
    fsm: FsmConfig = FsmConfig()
    calibration: Calibration = field(default_factory=geometry.default_calibration)
    tick_hz: float = 15.0
    camera_mount: str = "static"  # static | wrist
    gate_threshold: float = 0.7
    gate_ticks: int = 3

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_hz

    @classmethod
    def from_dict(cls, d: dict, calibration: Calibration | None = None) -> SimConfig:
        tick_hz = float(d.get("tick_hz", 15.0))
        if not tick_hz > 0:
            raise ValueError("tick rate must be positive")
        ctrl = dict(d.get("controller", {}))
        ctrl.setdefault("dt", 1.0 / tick_hz)
        fsm = d.get("fsm", {})
        cfg = cls(
            controller=ControllerConfig.from_dict(ctrl),
            envelope=SafetyEnvelope.from_dict(d.get("envelope", {})),
            calibration=calibration or geometry.default_calibration(),
            tick_hz=tick_hz,
            camera_mount=d.get("camera_mount", "static"),
            gate_threshold=float(d.get("gate_threshold", 0.7)),
            gate_ticks=int(d.get("gate_ticks", 3)),
        )
        caps = cfg.controller.caps
        cfg = replace(cfg, fsm=FsmConfig(
            release_radius=float(fsm.get("release_radius", 0.03)),
            release_dwell=int(fsm.get("release_dwell", 5)),
            arrive_tol=float(fsm.get("arrive_tol", 0.01)),
            caps=caps,
        ))
        if cfg.camera_mount not in ("static", "wrist"):
            raise ValueError("camera_mount must be 'static' or 'wrist'")
        return cfg


@dataclass(eq=False)
class SimResult:
    session: Session
    final: EndEffectorState
    rows: list
    events: list
    expectation: dict
    failures: list

    @property
    def ok(self) -> bool:
        return not self.failures


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def check_expectation(exp: dict, session: Session, final: EndEffectorState, env: SafetyEnvelope, tol: float) -> list:
    failures = []
    if "state" in exp and session.state != exp["state"]:
        failures.append(f"state {session.state!r} != expected {exp['state']!r}")
    if "delivered" in exp and session.delivered != list(exp["delivered"]):
        failures.append(f"delivered {session.delivered} != expected {exp['delivered']}")
    if "holding" in exp and final.holding != exp["holding"]:
        failures.append(f"holding {final.holding!r} != expected {exp['holding']!r}")
    if exp.get("at_home") and np.linalg.norm(final.position - env.home) > tol:
        failures.append(f"end-effector at {final.position.tolist()}, not home")
    return failures


def run(scenario: Scenario, gesture_model, movement_model, config: SimConfig = SimConfig(),
        realtime: bool = False) -> SimResult:
    dt = config.dt
    env = config.envelope
    calib = config.calibration
    perceiver = Perceiver(gesture_model, movement_model, dt, config.gate_threshold, config.gate_ticks)
    supervisor = Supervisor(config.controller)
    session = Session(config=config.fsm, home=env.home.copy())
    ee = EndEffectorState.at_home(env)

    def tick_of(t):
        return int(round(t / dt))

    by_tick: dict = {}
    frames_at: dict = {}
    for idx, entry in enumerate(scenario.entries):
        k0 = tick_of(entry.t)
        if entry.kind in ("command", "collision"):
            by_tick.setdefault(k0, []).append(entry)
        elif entry.kind == "landmark_file_segment":
            seg = scenario.segments[idx]
            if seg:
                for f in seg:
                    k = k0 + tick_of(f.t - seg[0].t)
                    frames_at[k] = replace(f, t=round(k * dt, 9))
    last_input = max([*by_tick, *frames_at, 0])
    end_tick = tick_of(scenario.end_t) if scenario.end_t is not None else None
    hard_stop = end_tick if end_tick is not None else last_input + tick_of(SETTLE_S)

    rows, events = [], []
    k = 0
    wall_start = time.perf_counter()
    while True:
        t = k * dt
        entries = by_tick.get(k, [])
        collision = any(e.kind == "collision" for e in entries)
        command = None
        for e in entries:
            if e.kind == "command":
                command = parse_command(e.payload["text"], session.tools)
        frame = frames_at.get(k)
        perc = perceiver.update(frame)

        palm_base = None
        if frame is not None and frame.targetable:
            if config.camera_mount == "wrist":
                ee_to_base = RigidTransform(calib.ee_to_base.rotation, ee.position)
            else:
                ee_to_base = calib.ee_to_base
            try:
                palm_base = geometry.pixel_to_base(calib.intrinsics, frame.palm_pixel, calib.eye_to_hand, ee_to_base)
            except DomainError:
                palm_base = None

        inp = FsmInputs(
            tick=k, t=t, position=ee.position, holding=ee.holding, stopped=ee.stopped or collision,
            command=command, hand_present=perc.hand_present, gesture=perc.gesture_actionable,
            urgency=perc.urgency_actionable, palm_base=palm_base,
        )
        directive = session.step(inp)

        cmd: ControlCommand | None = None
        if not (ee.stopped or collision):
            if directive.kind == "move":
                supervisor.set_mode(directive.mode, directive.cap, directive.urgency)
                cmd = supervisor.command(directive.target - ee.position)
            elif directive.kind in ("hold", "grip", "open_gripper"):
                supervisor.reset()
                cmd = ControlCommand.zero(supervisor.mode, directive.urgency)
            if directive.kind == "grip":
                ee = replace(ee, holding=directive.tool)
            elif directive.kind == "open_gripper":
                ee = replace(ee, holding=None)

        ee, safety = robot_step(ee, cmd, env, dt, collision=collision)
        for ev in safety:
            events.append({"tick": k, "t": t, "event": "safety", "kind": ev.kind, "details": ev.details})
        mode = cmd.mode if cmd is not None else "none"
        target = session.target.tolist() if session.target is not None else [None] * 3
        rows.append([k, t, *ee.position.tolist(), *ee.velocity.tolist(), mode, directive.urgency,
                     ";".join(ev.kind for ev in safety), session.state, ee.holding, perc.gesture_actionable, *target])

        if realtime:
            lag = (k + 1) * dt - (time.perf_counter() - wall_start)
            if lag > 0:
                time.sleep(lag)
        k += 1
        if end_tick is not None:
            if k > end_tick:
                break
        elif k > last_input and session.state in ("idle", "stopped"):
            break
        if k > hard_stop:
            break

    merged = sorted(session.log + events, key=lambda e: (e["tick"], e["event"] == "safety"))
    tol = config.fsm.arrive_tol
    failures = check_expectation(scenario.expectation, session, ee, env, tol)
    return SimResult(session, ee, rows, merged, scenario.expectation, failures)


def write_outputs(result: SimResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = out_dir / "trajectory.csv"
    with traj.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in result.rows:
            w.writerow([_fmt(v) for v in row])
    log = out_dir / "session_log.jsonl"
    with log.open("w") as fh:
        for e in result.events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    return traj, log


def read_trajectory(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_safety(rows, env: SafetyEnvelope, dt: float, tol: float = 1e-9) -> list[str]:
    """Safety invariants over a trajectory (rows as produced by :func:`run`
    or read back from CSV).

    Position stays inside the wall, speed under ``v_max``, per-tick velocity
    change under ``a_max * dt`` except on the collision-stop tick itself, and
    velocity is exactly zero on every tick from a collision stop onward.
    """
    problems = []
    prev_v = np.zeros(3)
    latched = False
    for row in rows:
        if not isinstance(row, dict):
            row = dict(zip(TRAJECTORY_COLUMNS, row))
        tick = int(row["tick"])
        p = np.array([float(row[c]) for c in ("x", "y", "z")])
        v = np.array([float(row[c]) for c in ("vx", "vy", "vz")])
        evs = row["events"].split(";") if row["events"] else []
        stop_now = "collision_stop" in evs
        if not env.contains(p, tol):
            problems.append(f"tick {tick}: position {p.tolist()} outside wall")
        if np.linalg.norm(v) > env.v_max + tol:
            problems.append(f"tick {tick}: speed {np.linalg.norm(v)} > v_max")
        if not stop_now and np.linalg.norm(v - prev_v) > env.a_max * dt + tol:
            problems.append(f"tick {tick}: acceleration {np.linalg.norm(v - prev_v) / dt} > a_max")
        latched = latched or stop_now
        if latched and np.any(v != 0):
            problems.append(f"tick {tick}: moving after collision stop")
        prev_v = v
    return problems


# scenario construction -------------------------------------------------------


def base_to_pixel(calib: Calibration, p_base) -> geometry.PixelObservation:
    cam_to_base = geometry.compose(calib.ee_to_base, calib.eye_to_hand)
    return geometry.project(calib.intrinsics, geometry.apply(geometry.invert(cam_to_base), p_base))


def hand_segment(label: str, seconds: float, palm_base, rng: np.random.Generator, calib: Calibration,
                 dt: float = 1.0 / 15.0, noise: float = 0.02, speed: float | None = None,
                 placement: datagen.Placement | None = None) -> list[LandmarkFrame]:
    """Synthetic landmark frames of one movement class with the palm held at
    a base-frame position (static open hand: ``low_urgency`` at speed 0).

    Pass the same ``placement`` to consecutive segments of one hand so its
    size and orientation do not jump at the seam.
    """
    templates = {t.label: t for t in datagen.DEFAULT_MOVEMENT_TEMPLATES}
    n = int(round(seconds / dt))
    if label == "low_urgency" and speed is None:
        speed = 0.0
    raw = datagen.render_motion(templates[label], n, rng, noise=noise, placement=placement, dt=dt,
                                target_speed=speed)
    anchor = base_to_pixel(calib, palm_base)
    return datagen.frames_from_raw(raw, 0.0, dt, anchor=anchor)


@dataclass
class ScenarioBuilder:
    """Accumulates scenario entries and their landmark segment files."""

    calib: Calibration = field(default_factory=geometry.default_calibration)
    seed: int = 0
    dt: float = 1.0 / 15.0
    entries: list = field(default_factory=list)
    segments: list = field(default_factory=list)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._placements = {}

    def command(self, t: float, text: str):
        self.entries.append({"t": t, "kind": "command", "payload": {"text": text}})
        return self

    def collision(self, t: float):
        self.entries.append({"t": t, "kind": "collision", "payload": {}})
        return self

    def hand(self, t: float, label: str, seconds: float, palm_base, speed: float | None = None):
        key = tuple(float(v) for v in palm_base)
        if key not in self._placements:
            self._placements[key] = datagen.random_placement(self.rng, datagen.OPEN)
        frames = hand_segment(label, seconds, palm_base, self.rng, self.calib, self.dt, speed=speed,
                              placement=self._placements[key])
        name = f"segments/seg{len(self.segments):03d}_{label}.jsonl"
        self.segments.append((name, frames))
        self.entries.append({"t": t, "kind": "landmark_file_segment", "payload": {"path": name}})
        return self

    def expect(self, **payload):
        self.entries.append({"t": 0.0, "kind": "expect", "payload": payload})
        return self

    def end(self, t: float):
        self.entries.append({"t": t, "kind": "end", "payload": {}})
        return self

    def write(self, out_dir, name: str = "scenario.jsonl") -> Path:
        out_dir = Path(out_dir)
        (out_dir / "segments").mkdir(parents=True, exist_ok=True)
        for seg_name, frames in self.segments:
            with (out_dir / seg_name).open("w") as fh:
                dump_stream(frames, fh)
        path = out_dir / name
        with path.open("w") as fh:
            for e in sorted(self.entries, key=lambda e: e["t"]):
                fh.write(json.dumps(e, sort_keys=True) + "\n")
        return path


REPAIR_STEPS = (
    ("give me the desoldering pump", "desoldering_pump", (0.10, 0.10, 0.30), "low_urgency"),
    ("can I have the soldering wire", "soldering_wire", (-0.15, 0.15, 0.30), "medium_urgency"),
    ("bring the wire cutter please", "wire_cutter", (0.00, 0.20, 0.35), "high_urgency"),
)
CYCLE_S = 32.0


def repair_scenario(variant: str = "repair", seed: int = 0, calib: Calibration | None = None) -> ScenarioBuilder:
    """The circuit-repair script: pump, then solder wire, then cutter.

    Each cycle issues the command, shows an open hand with an urgency burst
    and then a still open hand until the tool has been taken. Variants:
    ``go_away`` (sweep-away during the first delivery) and ``collision``
    (contact during the first delivery).
    """
    b = ScenarioBuilder(calib or geometry.default_calibration(), seed)
    if variant == "repair":
        for i, (text, _, palm, burst) in enumerate(REPAIR_STEPS):
            t0 = i * CYCLE_S
            b.command(t0, text)
            b.hand(t0 + 3.0, "low_urgency", 3.0, palm)
            b.hand(t0 + 6.0, burst, 3.0, palm)
            b.hand(t0 + 9.0, "low_urgency", 15.0, palm)
        b.expect(state="idle", delivered=[s[1] for s in REPAIR_STEPS], holding=None, at_home=True)
    elif variant == "go_away":
        text, tool, palm, _ = REPAIR_STEPS[0]
        b.command(0.0, text)
        b.hand(3.0, "low_urgency", 6.0, palm)
        b.hand(9.0, "go_away", 3.0, palm)
        b.expect(state="idle", delivered=[], holding=tool, at_home=True)
    elif variant == "collision":
        text, tool, palm, _ = REPAIR_STEPS[0]
        b.command(0.0, text)
        b.hand(3.0, "low_urgency", 15.0, palm)
        b.collision(10.0)
        b.expect(state="stopped", delivered=[], holding=tool)
        b.end(20.0)
    else:
        raise ValueError(f"unknown scenario variant {variant!r}")
    return b
