"""Scenario suite shared by the simulation tests and the acceptance gate."""

import numpy as np

from handover.simulation import REPAIR_STEPS, ScenarioBuilder, repair_scenario

PUMP = REPAIR_STEPS[0][0]
PALM = (0.10, 0.10, 0.30)


def xyz(row, prefix=""):
    return np.array([float(row[prefix + c]) for c in ("x", "y", "z")])


def release_violations(rows, home, radius=0.03, dwell=5) -> list[str]:
    """Re-derive the hand-over rule from the trajectory alone.

    The rule at tick ``k`` looks at the position the arm had when the tick
    began (the previous row, or home on tick 0) and the target logged on
    that row, together with the gated gesture.
    """
    bad = []
    for i, row in enumerate(rows):
        prev_state = rows[i - 1]["state"] if i else "idle"
        if row["state"] != "releasing" or prev_state == "releasing":
            continue
        if i < dwell - 1:
            bad.append(f"tick {row['tick']}: release before {dwell} ticks elapsed")
            continue
        for j in range(i - dwell + 1, i + 1):
            r = rows[j]
            start = xyz(rows[j - 1]) if j else np.asarray(home)
            if r["gesture"] != "open" or r["tx"] == "":
                bad.append(f"tick {r['tick']}: no open hand or target during dwell")
                continue
            d = np.linalg.norm(start - xyz(r, "t"))
            if d > radius + 1e-12:
                bad.append(f"tick {r['tick']}: {d:.4f} m from the palm during dwell")
    return bad


def _below_floor(b: ScenarioBuilder):
    # the palm sits under the virtual floor, so the arm is pinned at z = 0
    b.command(0.0, PUMP)
    b.hand(3.0, "low_urgency", 20.0, (0.20, 0.10, -0.10))
    b.expect(state="delivering", delivered=[], holding="desoldering_pump")
    b.end(24.0)


def _far_corner_high(b: ScenarioBuilder):
    b.command(0.0, "bring the wire cutter please")
    b.hand(3.0, "high_urgency", 12.0, (0.45, 0.45, 0.05))
    b.hand(15.0, "go_away", 3.0, (0.45, 0.45, 0.05))
    b.expect(state="idle", delivered=[], holding="wire_cutter", at_home=True)


def _command_spam(b: ScenarioBuilder):
    texts = ["pump", "pump and iron", "hello robot", "", "give me the iron", "wire cutters now", "WIRE"]
    for i, text in enumerate(texts * 3):
        b.command(0.5 * i, text)
    b.hand(3.0, "low_urgency", 16.0, PALM)
    b.expect(state="idle", delivered=["desoldering_pump"], holding=None, at_home=True)


def _collision_while_fetching(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    b.collision(2.0)
    b.command(3.0, "bring the wire cutter please")
    b.hand(3.0, "high_urgency", 4.0, PALM)
    b.expect(state="stopped", delivered=[], holding=None)
    b.end(8.0)


def _flicker(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    for k in range(6):
        b.hand(3.0 + 2.0 * k, "low_urgency", 1.2, PALM)
    b.hand(15.0, "low_urgency", 12.0, PALM)
    b.expect(state="idle", delivered=["desoldering_pump"], holding=None, at_home=True)


def _go_away_while_fetching(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    b.hand(0.5, "go_away", 3.0, PALM)
    b.expect(state="idle", delivered=[], holding=None, at_home=True)


def _urgency_churn(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    t = 3.0
    palm = (-0.20, 0.20, 0.25)
    for label in ["high_urgency", "low_urgency", "medium_urgency", "high_urgency", "medium_urgency"]:
        b.hand(t, label, 2.5, palm)
        t += 2.5
    b.hand(t, "low_urgency", 14.0, palm)
    b.expect(state="idle", delivered=["desoldering_pump"], holding=None, at_home=True)


def _collision_at_start(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    b.collision(0.0)
    b.expect(state="stopped", delivered=[], holding=None)
    b.end(3.0)


def _collision_while_returning(b: ScenarioBuilder):
    b.command(0.0, PUMP)
    b.hand(3.0, "low_urgency", 12.0, PALM)
    b.collision(12.5)
    b.collision(13.0)
    b.expect(state="stopped", delivered=["desoldering_pump"], holding=None)
    b.end(16.0)


BUILDERS = {
    "repair": None,
    "go_away": None,
    "collision": None,
    "below_floor": _below_floor,
    "far_corner_high": _far_corner_high,
    "command_spam": _command_spam,
    "collision_while_fetching": _collision_while_fetching,
    "flicker": _flicker,
    "go_away_while_fetching": _go_away_while_fetching,
    "urgency_churn": _urgency_churn,
    "collision_at_start": _collision_at_start,
    "collision_while_returning": _collision_while_returning,
}


def build_suite(out_dir, seed: int = 0) -> dict:
    """Write every scenario under ``out_dir/<name>/``; returns name -> path."""
    paths = {}
    for name, fn in BUILDERS.items():
        if fn is None:
            b = repair_scenario(name, seed=seed)
        else:
            b = ScenarioBuilder(seed=seed)
            fn(b)
        paths[name] = b.write(out_dir / name)
    return paths
