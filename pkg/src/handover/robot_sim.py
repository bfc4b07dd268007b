"""Kinematic point end-effector with a virtual wall, rate limits and a
collision stop latch."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .control import ControlCommand


class RobotStoppedError(RuntimeError):
    """A motion command reached a robot whose collision stop is latched."""


@dataclass(frozen=True, eq=False)
class SafetyEnvelope:
    wall_min: np.ndarray = field(default_factory=lambda: np.array([-0.5, -0.5, 0.0]))
    wall_max: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.8]))
    v_max: float = 0.5
    a_max: float = 2.0
    home: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.4]))

    def __post_init__(self):
        lo = np.asarray(self.wall_min, dtype=float)
        hi = np.asarray(self.wall_max, dtype=float)
        home = np.asarray(self.home, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("virtual wall box is degenerate")
        if np.any(home < lo) or np.any(home > hi):
            raise ValueError("home pose lies outside the virtual wall")
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("velocity and acceleration limits must be positive")
        object.__setattr__(self, "wall_min", lo)
        object.__setattr__(self, "wall_max", hi)
        object.__setattr__(self, "home", home)

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.wall_min - tol) and np.all(p <= self.wall_max + tol))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.wall_max - self.wall_min))

    def to_dict(self) -> dict:
        return {
            "wall_min": self.wall_min.tolist(),
            "wall_max": self.wall_max.tolist(),
            "v_max": self.v_max,
            "a_max": self.a_max,
            "home": self.home.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SafetyEnvelope:
        base = cls()
        return cls(
            wall_min=d.get("wall_min", base.wall_min),
            wall_max=d.get("wall_max", base.wall_max),
            v_max=d.get("v_max", base.v_max),
            a_max=d.get("a_max", base.a_max),
            home=d.get("home", base.home),
        )


@dataclass(frozen=True, eq=False)
class EndEffectorState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0
    holding: str | None = None
    stopped: bool = False

    @classmethod
    def at_home(cls, env: SafetyEnvelope) -> EndEffectorState:
        return cls(env.home.copy())


@dataclass(frozen=True)
class SafetyEvent:
    kind: str  # wall_clamp | velocity_clamp | accel_clamp | collision_stop
    t: float
    details: str = ""


def step(state: EndEffectorState, cmd: ControlCommand | None, env: SafetyEnvelope, dt: float,
         collision: bool = False) -> tuple[EndEffectorState, list[SafetyEvent]]:
    """Advance one tick.

    The requested velocity is slew-limited by ``a_max`` and then clamped to
    ``v_max``, position is integrated with forward Euler and clamped to the
    wall per axis. The stored velocity is the limited command, which keeps
    the acceleration bound exact even on ticks where the wall blocks motion.
    ``cmd=None`` is a passive tick (zero request), the only
    input accepted while the stop latch is set.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t = state.t + dt
    if state.stopped:
        if cmd is not None and np.any(cmd.velocity != 0):
            raise RobotStoppedError("collision stop is latched; reset before commanding motion")
        return replace(state, velocity=np.zeros(3), t=t), []
    if collision:
        ev = SafetyEvent("collision_stop", t, "external contact detected")
        return replace(state, velocity=np.zeros(3), t=t, stopped=True), [ev]

    events = []
    want = np.zeros(3) if cmd is None else np.asarray(cmd.velocity, dtype=float)
    dv = want - state.velocity
    max_dv = env.a_max * dt
    n = float(np.linalg.norm(dv))
    if n > max_dv:
        dv *= max_dv / n
        events.append(SafetyEvent("accel_clamp", t, f"|dv|={n:.6g} > {max_dv:.6g}"))
    vel = state.velocity + dv
    speed = float(np.linalg.norm(vel))
    if speed > env.v_max:
        vel = vel * (env.v_max / speed)
        events.append(SafetyEvent("velocity_clamp", t, f"|v|={speed:.6g} > {env.v_max:.6g}"))

    pos = state.position + vel * dt
    clipped = np.clip(pos, env.wall_min, env.wall_max)
    hit = clipped != pos
    if np.any(hit):
        axes = "".join("xyz"[i] for i in range(3) if hit[i])
        events.append(SafetyEvent("wall_clamp", t, f"axes {axes}"))
    return replace(state, position=clipped, velocity=vel, t=t), events


def reset_to_home(state: EndEffectorState, env: SafetyEnvelope) -> EndEffectorState:
    """Teleport to the home pose with zero velocity and clear the latch.

    Whatever the gripper holds is kept.
    """
    return replace(state, position=env.home.copy(), velocity=np.zeros(3), stopped=False)
