import json

import numpy as np
import pytest

from handover import datagen
from handover.classifiers import (
    GESTURE_LABELS,
    MOVEMENT_LABELS,
    ConfidenceGate,
    ConfusionMatrix,
    LabelMismatchError,
    classify_gesture,
    classify_movement,
    confusion_matrix,
    evaluate,
)
from handover.landmarks import normalize_landmarks


class Fixed:
    """Stand-in model predicting a fixed label index per row."""

    def __init__(self, labels, pred):
        self.labels = labels
        self.pred = pred

    def predict(self, x):
        return self.pred(np.asarray(x))


def test_absent_hand_is_no_hand(gesture_model):
    label, probs = classify_gesture(gesture_model.bundle, None)
    assert label == "no_hand" and probs["no_hand"] == 1.0
    assert set(probs) == set(GESTURE_LABELS)


@pytest.mark.parametrize("template", [datagen.OPEN, datagen.OCCUPIED, datagen.CLOSED])
def test_template_poses(gesture_model, template):
    pose = normalize_landmarks(template.landmarks)
    label, probs = classify_gesture(gesture_model.bundle, pose)
    assert label == template.label
    assert sum(probs.values()) == pytest.approx(1.0)


def test_gesture_invariant_to_translation_and_scale(gesture_model):
    ds = datagen.gen_gesture_set(n_per_class=20, seed=77)
    for frames in ds.frames:
        raw = frames[0].landmarks
        a = classify_gesture(gesture_model.bundle, normalize_landmarks(raw))
        b = classify_gesture(gesture_model.bundle, normalize_landmarks(raw * 1.7 + np.array([0.2, -0.1, 0.05])))
        assert a[0] == b[0]
        for k in a[1]:
            assert a[1][k] == pytest.approx(b[1][k], abs=1e-9)


def test_static_window_is_low(movement_model):
    pose = normalize_landmarks(datagen.OPEN.landmarks)
    label, _ = classify_movement(movement_model.bundle, np.tile(pose, (30, 1)))
    assert label == "low_urgency"


def _one(template_label, seed=5):
    (tmpl,) = [t for t in datagen.DEFAULT_MOVEMENT_TEMPLATES if t.label == template_label]
    raw = datagen.render_motion(tmpl, 30, np.random.default_rng(seed))
    return np.stack([normalize_landmarks(f) for f in raw])


@pytest.mark.parametrize("label", ["high_urgency", "go_away", "medium_urgency"])
def test_movement_templates(movement_model, label):
    got = [classify_movement(movement_model.bundle, _one(label, s))[0] for s in range(5)]
    assert got.count(label) >= 4


def test_movement_wrong_window(movement_model):
    with pytest.raises(ValueError):
        classify_movement(movement_model.bundle, np.zeros((29, 63)))


def test_label_mismatch(gesture_model, movement_model):
    with pytest.raises(LabelMismatchError):
        classify_gesture(movement_model.bundle, np.zeros(63))
    with pytest.raises(LabelMismatchError):
        classify_movement(gesture_model.bundle, np.zeros((30, 63)))


def test_argmax_invariant_to_logit_shift(gesture_model):
    bundle = gesture_model.bundle
    x = gesture_model.heldout.x[:50]
    logits = bundle.logits(x)
    shifted = logits + 123.0
    np.testing.assert_array_equal(np.argmax(shifted, axis=1), bundle.predict(x))


def test_evaluate_perfect_and_constant():
    y = np.repeat(np.arange(4), 25)
    cm = evaluate(Fixed(MOVEMENT_LABELS, lambda x: y.copy()), np.zeros((100, 3)), y)
    assert cm.accuracy == 1.0
    np.testing.assert_array_equal(cm.counts, np.diag([25] * 4))
    cm = evaluate(Fixed(MOVEMENT_LABELS, lambda x: np.zeros(len(x), dtype=int)), np.zeros((100, 3)), y)
    assert cm.accuracy == 0.25
    np.testing.assert_array_equal(cm.counts.sum(axis=1), [25] * 4)
    with pytest.raises(ValueError):
        evaluate(Fixed(MOVEMENT_LABELS, lambda x: x), np.zeros((0, 3)), np.zeros(0))


def test_confusion_report(tmp_path, rng):
    y = rng.integers(0, 3, size=200)
    pred = np.where(rng.random(200) < 0.8, y, rng.integers(0, 3, size=200))
    cm = confusion_matrix(y, pred, ("a", "b", "c"))
    assert cm.accuracy == pytest.approx(np.trace(cm.counts) / 200)
    assert cm.accuracy == pytest.approx((y == pred).mean())
    paths = cm.write(tmp_path, "g")
    summary = json.loads(paths[2].read_text())
    assert summary["accuracy"] == cm.accuracy
    assert set(summary["precision"]) == {"a", "b", "c"}
    heat = np.loadtxt(paths[1], delimiter=",", skiprows=1, usecols=(1, 2, 3))
    np.testing.assert_allclose(heat.sum(axis=1), 1.0)
    assert isinstance(cm, ConfusionMatrix)


def test_confidence_gate():
    gate = ConfidenceGate(0.7, 3)
    seq = [("open", 0.9), ("open", 0.8), ("open", 0.75), ("open", 0.71), ("closed", 0.9), ("open", 0.95)]
    assert [gate.update(*s) for s in seq] == [None, None, "open", "open", None, None]
    gate.reset()
    assert [gate.update("open", p) for p in (0.9, 0.6, 0.9, 0.9, 0.9)] == [None, None, None, None, "open"]
