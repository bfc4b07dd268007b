import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handover.workflow import (
    DEFAULT_TOOLS,
    STATES,
    TRANSITIONS,
    FsmInputs,
    IllegalTransition,
    Session,
    fsm_step,
    parse_command,
    release_check,
)

DT = 1.0 / 15.0
HOME = np.array([0.0, 0.0, 0.4])


@pytest.mark.parametrize(
    "text, tool",
    [
        ("give me the desoldering pump", "desoldering_pump"),
        ("", None),
        ("bring the wire cutter please", "wire_cutter"),
        ("Pass the CUTTERS", "wire_cutter"),
        ("can I have the soldering wire", "soldering_wire"),
        ("some solder please", "soldering_wire"),
        ("hand me the iron", "soldering_iron"),
        ("pump and iron", None),
        ("what time is it", None),
        (None, None),
    ],
)
def test_parse_command(text, tool):
    c = parse_command(text)
    assert c.tool == tool
    assert c.intent == (f"fetch({tool})" if tool else "none")


def test_release_check_examples():
    target = np.array([0.1, 0.1, 0.3])
    near = target + [0.01, 0, 0]
    assert not release_check(target + [0.5, 0, 0], target, "open", [True] * 10)
    assert release_check(near, target, "open", [True] * 4)
    assert not release_check(near, target, "open", [True] * 3)
    assert not release_check(near, target, "open", [False, True, True, True])
    assert not release_check(near, target, "closed", [True] * 4)
    assert not release_check(near, None, "open", [True] * 4)


def inputs(tick, pos, **kw):
    return FsmInputs(tick=tick, t=tick * DT, position=np.asarray(pos, dtype=float), **kw)


def test_fetch_directive():
    s = Session()
    d = s.step(inputs(0, HOME, command=parse_command("give me the desoldering pump")))
    assert s.state == "fetching" and s.requested == "desoldering_pump"
    assert d.kind == "move" and d.mode == "lqr"
    np.testing.assert_array_equal(d.target, DEFAULT_TOOLS["desoldering_pump"].pickup)


def delivering_session():
    s = Session()
    s.step(inputs(0, HOME, command=parse_command("pump")))
    pickup = DEFAULT_TOOLS["desoldering_pump"].pickup
    d = s.step(inputs(1, pickup))
    assert s.state == "waiting_for_hand" and d.kind == "grip" and d.tool == "desoldering_pump"
    palm = np.array([0.1, 0.1, 0.3])
    d = s.step(inputs(2, pickup, holding="desoldering_pump", hand_present=True, gesture="open", palm_base=palm))
    assert s.state == "delivering" and d.kind == "move"
    np.testing.assert_array_equal(d.target, palm)
    return s, palm


def test_go_away_during_delivery():
    s, palm = delivering_session()
    d = s.step(inputs(3, palm + 0.2, holding="desoldering_pump", hand_present=True, gesture="open",
                      urgency="go_away", palm_base=palm))
    assert s.state == "returning" and s.target is None
    assert d.kind == "move"
    np.testing.assert_array_equal(d.target, HOME)


def test_occupied_holds():
    s, palm = delivering_session()
    d = s.step(inputs(3, palm + 0.2, holding="desoldering_pump", hand_present=True, gesture="occupied",
                      palm_base=palm))
    assert s.state == "delivering" and d.kind == "hold"


def test_closed_keeps_tracking_without_release():
    s, palm = delivering_session()
    for k in range(3, 15):
        d = s.step(inputs(k, palm, holding="desoldering_pump", hand_present=True, gesture="closed", palm_base=palm))
        assert s.state == "delivering" and d.kind == "move"


def test_urgency_sets_mode():
    s, palm = delivering_session()
    d = s.step(inputs(3, palm + 0.2, holding="desoldering_pump", hand_present=True, gesture="open",
                      urgency="high_urgency", palm_base=palm))
    assert (d.mode, d.cap) == ("pid", 0.5)
    d = s.step(inputs(4, palm + 0.2, holding="desoldering_pump", hand_present=True, gesture="open",
                      urgency="medium_urgency", palm_base=palm))
    assert (d.mode, d.cap) == ("lqr", 0.25)


def test_release_then_return_home():
    s, palm = delivering_session()
    kinds = []
    for k in range(3, 8):
        d = s.step(inputs(k, palm, holding="desoldering_pump", hand_present=True, gesture="open", palm_base=palm))
        kinds.append(d.kind)
    assert kinds == ["move"] * 4 + ["open_gripper"]
    assert s.state == "releasing"
    d = s.step(inputs(8, palm, holding=None))
    assert s.state == "returning" and s.delivered == ["desoldering_pump"]
    d = s.step(inputs(9, HOME))
    assert s.state == "idle" and s.requested is None and d.kind == "none"


def test_collision_stops_and_rejects():
    s, palm = delivering_session()
    s.step(inputs(3, palm, stopped=True))
    assert s.state == "stopped"
    d = s.step(inputs(4, palm, stopped=True, command=parse_command("iron")))
    assert d.kind == "none" and s.state == "stopped"
    assert s.log[-1]["event"] == "rejected"


def test_go_away_ignored_when_idle():
    s = Session()
    s.step(inputs(0, HOME, urgency="go_away"))
    assert s.state == "idle"


def test_illegal_transition_guard():
    s = Session()
    with pytest.raises(IllegalTransition):
        s._go("delivering", inputs(0, HOME), "test")


def test_fsm_step_returns_session():
    s = Session()
    s2, d = fsm_step(s, inputs(0, HOME, command=parse_command("cutter")))
    assert s2 is s and s.state == "fetching"


# random input driver ---------------------------------------------------------

tick_input = st.fixed_dictionaries(
    {
        "command": st.sampled_from([None, None, None, "pump", "wire cutter", "hello", "iron"]),
        "hand": st.booleans(),
        "gesture": st.sampled_from([None, "open", "open", "closed", "occupied", "no_hand"]),
        "urgency": st.sampled_from([None, "low_urgency", "medium_urgency", "high_urgency", "go_away"]),
        "palm": st.sampled_from([None, (0.1, 0.1, 0.3), (-0.2, 0.2, 0.35), (0.0, 0.0, 0.4)]),
        "collision": st.integers(0, 200).map(lambda v: v == 0),
    }
)


def advance(pos, holding, d):
    if d.kind == "move":
        step = d.target - pos
        n = np.linalg.norm(step)
        lim = max(d.cap, 0.1) * DT
        pos = pos + (step if n <= lim else step * lim / n)
    elif d.kind == "grip":
        holding = d.tool
    elif d.kind == "open_gripper":
        holding = None
    return pos, holding


@settings(max_examples=150, deadline=None)
@given(seq=st.lists(tick_input, min_size=1, max_size=120))
def test_random_inputs_stay_legal_and_terminate(seq):
    s = Session()
    pos, holding, stopped = HOME.copy(), None, False
    history = []
    tick = 0

    def one(inp):
        nonlocal pos, holding, stopped
        prev = s.state
        d = s.step(inp)
        assert (prev, s.state) in TRANSITIONS or prev == s.state
        assert s.state in STATES
        if s.state not in ("idle", "stopped"):
            assert s.requested is not None
        if d.kind == "open_gripper" and prev == "delivering":
            # independent re-evaluation of the release rule over this delivery
            assert history[-5:] == [True] * 5
        pos, holding = advance(pos, holding, d)

    for x in seq:
        stopped = stopped or x["collision"]
        palm = None if x["palm"] is None else np.array(x["palm"])
        inp = inputs(tick, pos, holding=holding, stopped=stopped, command=parse_command(x["command"]) if x["command"] else None,
                     hand_present=x["hand"], gesture=x["gesture"] if x["hand"] else "no_hand",
                     urgency=x["urgency"] if x["hand"] else None, palm_base=palm if x["hand"] else None)
        if s.state == "delivering" or (s.state == "waiting_for_hand" and inp.hand_present and inp.gesture == "open"):
            if s.state == "waiting_for_hand":
                history = []
            tgt = inp.palm_base if inp.palm_base is not None else s.target
            ok = (inp.hand_present and inp.gesture == "open" and inp.palm_base is not None
                  and tgt is not None and np.linalg.norm(pos - tgt) <= 0.03)
            history.append(bool(ok))
        one(inp)
        tick += 1

    # quiescent tail: no commands, no hand; the session must settle
    for _ in range(2000):
        if s.state in ("idle", "stopped", "waiting_for_hand"):
            break
        one(inputs(tick, pos, holding=holding, stopped=stopped))
        tick += 1
    if s.state == "waiting_for_hand":
        # nobody offers a hand: a go_away brings the tool back home
        one(inputs(tick, pos, holding=holding, stopped=stopped, hand_present=True, urgency="go_away"))
        tick += 1
        for _ in range(2000):
            if s.state in ("idle", "stopped"):
                break
            one(inputs(tick, pos, holding=holding, stopped=stopped))
            tick += 1
    assert s.state in ("idle", "stopped")


def test_go_away_reaches_home_within_bound():
    s, palm = delivering_session()
    pos, holding = palm + np.array([0.3, 0.3, 0.2]), "desoldering_pump"
    d = s.step(inputs(3, pos, holding=holding, hand_present=True, urgency="go_away", gesture="open", palm_base=palm))
    assert s.state == "returning"
    cap = 0.25
    bound = int(np.ceil(np.sqrt(3) / (cap * DT))) + 2
    for k in range(bound):
        pos, holding = advance(pos, holding, d)
        d = s.step(inputs(4 + k, pos, holding=holding))
        if s.state == "idle":
            break
    assert s.state == "idle" and holding == "desoldering_pump"
