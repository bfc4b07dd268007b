"""Fetch/deliver handover state machine and the text command parser.

States::

    idle --fetch(tool)--> fetching --at pickup--> waiting_for_hand
    waiting_for_hand --open hand--> delivering --release rule--> releasing
    releasing --gripper empty--> returning --at home--> idle
    any active state --go_away--> returning;  collision --> stopped

The machine never moves the robot itself. Each tick it returns one
:class:`Directive` for the control loop to carry out.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .control import ABORT, SpeedCaps, select_mode

STATES = ("idle", "fetching", "waiting_for_hand", "delivering", "releasing", "returning", "stopped")
ACTIVE = ("fetching", "waiting_for_hand", "delivering", "releasing")
TRANSITIONS = frozenset(
    [
        ("idle", "fetching"),
        ("fetching", "waiting_for_hand"),
        ("waiting_for_hand", "delivering"),
        ("delivering", "releasing"),
        ("releasing", "returning"),
        ("returning", "idle"),
        *((s, "returning") for s in ACTIVE),
        *((s, "stopped") for s in STATES if s != "stopped"),
    ]
)


class IllegalTransition(RuntimeError):
    pass


class SessionStoppedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Tool:
    name: str
    pickup: np.ndarray
    phrases: tuple = ()


DEFAULT_TOOLS = {
    t.name: t
    for t in (
        Tool("soldering_iron", np.array([-0.10, -0.35, 0.10]), ("soldering iron", "iron")),
        Tool("desoldering_pump", np.array([0.35, -0.35, 0.10]), ("desoldering pump", "pump")),
        Tool("soldering_wire", np.array([0.20, -0.35, 0.10]), ("soldering wire", "solder wire", "solder", "wire")),
        Tool("wire_cutter", np.array([0.05, -0.35, 0.10]), ("wire cutters", "wire cutter", "cutters", "cutter")),
    )
}


@dataclass(frozen=True)
class Command:
    text: str
    tool: str | None = None

    @property
    def intent(self) -> str:
        return f"fetch({self.tool})" if self.tool else "none"


def parse_command(text: str, tools: dict = DEFAULT_TOOLS) -> Command:
    """Map free text to a fetch intent by keyword lookup.

    Longer phrases are matched first and consume their words, so "wire
    cutter" does not also count as "wire". Text naming no tool, or more than
    one, parses to no intent.
    """
    words = re.findall(r"[a-z]+", (text or "").lower())
    phrases = sorted(
        ((tuple(p.split()), t.name) for t in tools.values() for p in (*t.phrases, t.name.replace("_", " "))),
        key=lambda item: -len(item[0]),
    )
    used = [False] * len(words)
    found = set()
    for phrase, name in phrases:
        n = len(phrase)
        for i in range(len(words) - n + 1):
            if not any(used[i : i + n]) and tuple(words[i : i + n]) == phrase:
                found.add(name)
                for j in range(i, i + n):
                    used[j] = True
    return Command(text or "", found.pop() if len(found) == 1 else None)


def release_check(position, target, gesture: str | None, history, radius: float = 0.03, dwell: int = 5) -> bool:
    """Hand-over condition for the current tick.

    ``history`` holds the per-tick outcomes (within radius and open hand) of
    earlier ticks, most recent last. True iff this tick and the previous
    ``dwell - 1`` ticks all qualify.
    """
    if target is None:
        return False
    ok = gesture == "open" and float(np.linalg.norm(np.asarray(position) - np.asarray(target))) <= radius
    if not ok:
        return False
    past = list(history)[-(dwell - 1):] if dwell > 1 else []
    return len(past) == dwell - 1 and all(past)


@dataclass(frozen=True, eq=False)
class Directive:
    kind: str  # move | hold | grip | open_gripper | none
    target: np.ndarray | None = None
    mode: str = "lqr"
    cap: float = 0.0
    urgency: str = "low_urgency"
    tool: str | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mode": self.mode, "cap": self.cap, "urgency": self.urgency}
        if self.target is not None:
            d["target"] = [float(v) for v in self.target]
        if self.tool is not None:
            d["tool"] = self.tool
        return d


@dataclass(eq=False)
class FsmInputs:
    tick: int
    t: float
    position: np.ndarray
    holding: str | None = None
    stopped: bool = False
    command: Command | None = None
    hand_present: bool = False
    gesture: str | None = None  # debounced gesture label, None while uncertain
    urgency: str | None = None  # debounced movement label, None while uncertain
    palm_base: np.ndarray | None = None


@dataclass(frozen=True)
class FsmConfig:
    release_radius: float = 0.03
    release_dwell: int = 5
    arrive_tol: float = 0.01
    caps: SpeedCaps = SpeedCaps()


@dataclass(eq=False)
class Session:
    config: FsmConfig = FsmConfig()
    tools: dict = field(default_factory=lambda: dict(DEFAULT_TOOLS))
    home: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.4]))
    state: str = "idle"
    requested: str | None = None
    target: np.ndarray | None = None
    urgency: str = "low_urgency"
    entered_tick: int = 0
    release_history: list = field(default_factory=list)
    log: list = field(default_factory=list)
    delivered: list = field(default_factory=list)

    def _go(self, new: str, inp: FsmInputs, reason: str) -> None:
        if (self.state, new) not in TRANSITIONS:
            raise IllegalTransition(f"{self.state} -> {new}")
        self.log.append(
            {"tick": inp.tick, "t": inp.t, "event": "transition", "from": self.state, "to": new, "reason": reason}
        )
        self.state = new
        self.entered_tick = inp.tick
        if new in ("idle", "stopped"):
            if new == "idle":
                self.requested = None
            self.target = None
        if new == "returning":
            self.target = None
        if new == "delivering":
            self.release_history = []
            self.urgency = "low_urgency"

    def _note(self, inp: FsmInputs, event: str, **extra) -> None:
        self.log.append({"tick": inp.tick, "t": inp.t, "event": event, **extra})

    def _move(self, target, mode="lqr", cap=None, urgency=None) -> Directive:
        return Directive("move", np.asarray(target, dtype=float), mode, self.config.caps.med if cap is None else cap,
                         urgency or self.urgency)

    def _hold(self) -> Directive:
        return Directive("hold", None, "lqr", 0.0, self.urgency)

    def step(self, inp: FsmInputs) -> Directive:
        """Consume one tick of inputs and return the directive for it."""
        if self.state == "stopped":
            if inp.command is not None and inp.command.tool:
                self._note(inp, "rejected", text=inp.command.text, reason="session stopped")
            return Directive("none")
        if inp.stopped:
            self._go("stopped", inp, "collision_stop")
            return Directive("none")

        if inp.command is not None:
            if self.state == "idle" and inp.command.tool in self.tools:
                self.requested = inp.command.tool
                self._note(inp, "command", text=inp.command.text, intent=inp.command.intent)
                self._go("fetching", inp, f"fetch({self.requested})")
            else:
                self._note(inp, "ignored", text=inp.command.text, intent=inp.command.intent, state=self.state)

        if inp.urgency == "go_away" and self.state in ACTIVE:
            self._go("returning", inp, "go_away")

        handler = getattr(self, f"_tick_{self.state}")
        directive = handler(inp)
        if directive.kind != "none":
            self._note(inp, "directive", **directive.to_dict())
        return directive

    def _tick_idle(self, inp: FsmInputs) -> Directive:
        return Directive("none")

    def _tick_fetching(self, inp: FsmInputs) -> Directive:
        pickup = self.tools[self.requested].pickup
        if np.linalg.norm(inp.position - pickup) <= self.config.arrive_tol:
            self._go("waiting_for_hand", inp, "arrived at pickup")
            return Directive("grip", None, "lqr", 0.0, self.urgency, tool=self.requested)
        return self._move(pickup)

    def _tick_waiting_for_hand(self, inp: FsmInputs) -> Directive:
        if inp.hand_present and inp.gesture == "open":
            self._go("delivering", inp, "open hand")
            return self._tick_delivering(inp)
        return self._hold()

    def _tick_delivering(self, inp: FsmInputs) -> Directive:
        if inp.urgency is not None:
            self.urgency = inp.urgency
        if inp.palm_base is not None and inp.hand_present:
            self.target = np.asarray(inp.palm_base, dtype=float)
        if inp.gesture == "occupied" or not inp.hand_present or inp.palm_base is None:
            self.release_history.append(False)
            return self._hold()
        released = release_check(inp.position, self.target, inp.gesture, self.release_history,
                                 self.config.release_radius, self.config.release_dwell)
        ok = inp.gesture == "open" and np.linalg.norm(inp.position - self.target) <= self.config.release_radius
        self.release_history.append(bool(ok))
        if released:
            self._note(inp, "release_check", result=True, distance=float(np.linalg.norm(inp.position - self.target)))
            self._go("releasing", inp, "release rule met")
            return Directive("open_gripper", None, "lqr", 0.0, self.urgency, tool=self.requested)
        mode, cap = select_mode(self.urgency, None, self.config.caps)
        if mode == ABORT:  # pragma: no cover - go_away handled above
            return self._hold()
        return self._move(self.target, mode, cap)

    def _tick_releasing(self, inp: FsmInputs) -> Directive:
        if inp.holding is None:
            self.delivered.append(self.requested)
            self._go("returning", inp, "gripper empty")
            return self._tick_returning(inp)
        return Directive("open_gripper", None, "lqr", 0.0, self.urgency, tool=self.requested)

    def _tick_returning(self, inp: FsmInputs) -> Directive:
        if np.linalg.norm(inp.position - self.home) <= self.config.arrive_tol:
            self._go("idle", inp, "at home")
            return Directive("none")
        return self._move(self.home)


def fsm_step(session: Session, inputs: FsmInputs) -> tuple[Session, Directive]:
    directive = session.step(inputs)
    return session, directive
