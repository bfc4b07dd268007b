"""Synthetic labeled hand gestures and hand movements.

Hands are built from a parametric 21-joint skeleton in *hand units*: wrist at
the origin, fingers pointing along -y, palm facing -z (towards the camera),
and an open hand measuring about 1 unit from wrist to middle fingertip. One
hand unit is taken as 0.18 m when speeds are quoted in m/s.

Raw frames are placed in normalized image coordinates (x, y in [0, 1], z as
relative depth on the same scale) so they go through exactly the same
normalization as recorded streams.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import PixelObservation
from .landmarks import (
    DEFAULT_DT,
    PALM_IDS,
    WINDOW_LEN,
    LandmarkFrame,
    dump_stream,
    normalize_landmarks,
    parse_stream,
    trim,
)

HAND_LENGTH_M = 0.18
IMAGE_W, IMAGE_H = 640, 480
GESTURE_LABELS = ("open", "closed", "occupied")
MOVEMENT_LABELS = ("low_urgency", "medium_urgency", "high_urgency", "go_away")

# in-plane finger base layout: (MCP position, spread angle deg, segment lengths)
_FINGERS = (
    ((0.12, -0.42, 0.0), 8.0, (0.22, 0.13, 0.10)),  # index
    ((0.00, -0.45, 0.0), 0.0, (0.25, 0.15, 0.11)),  # middle
    ((-0.11, -0.42, 0.0), -8.0, (0.23, 0.14, 0.10)),  # ring
    ((-0.21, -0.37, 0.0), -16.0, (0.18, 0.10, 0.09)),  # pinky
)
_THUMB_BASE = np.array([0.12, -0.10, 0.0])
_THUMB_LENGTHS = (0.17, 0.13, 0.11)
_THUMB_ANGLE = math.radians(50.0)
_TOWARD_CAMERA = np.array([0.0, 0.0, -1.0])
_ACROSS_PALM = np.array([-1.0, 0.0, -0.5]) / math.sqrt(1.25)
# distance wrist -> middle MCP, rigid under finger flexion
_WRIST_TO_MCP9 = 0.45


def hand_skeleton(flexion, spread=1.0) -> np.ndarray:
    """21x3 landmarks for per-joint flexion angles in degrees.

    ``flexion`` is 5x3: thumb, index, middle, ring, pinky; joints proximal to
    distal. Angles accumulate along the finger, bending it toward the camera.
    Leading batch dimensions are allowed (``(..., 5, 3)`` gives ``(..., 21, 3)``)
    with ``spread`` broadcast against them.
    """
    flex = np.radians(np.asarray(flexion, dtype=float))
    batch = flex.shape[:-2]
    spread = np.broadcast_to(np.asarray(spread, dtype=float), batch)
    theta = np.cumsum(flex, axis=-1)[..., None]  # (..., 5, 3, 1)
    pts = np.zeros(batch + (21, 3))

    d = np.array([math.sin(_THUMB_ANGLE), -math.cos(_THUMB_ANGLE), 0.0])
    seg = np.cos(theta[..., 0, :, :]) * d + np.sin(theta[..., 0, :, :]) * _ACROSS_PALM
    seg = seg * np.array(_THUMB_LENGTHS)[:, None]
    pts[..., 1, :] = _THUMB_BASE
    pts[..., 2:5, :] = _THUMB_BASE + np.cumsum(seg, axis=-2)

    for f, (mcp, angle, lengths) in enumerate(_FINGERS):
        base = 1 + 4 * (f + 1)
        a = np.radians(angle * spread)[..., None, None]
        d = np.concatenate([-np.sin(a), -np.cos(a), np.zeros_like(a)], axis=-1)  # (..., 1, 3)
        th = theta[..., f + 1, :, :]
        seg = (np.cos(th) * d + np.sin(th) * _TOWARD_CAMERA) * np.array(lengths)[:, None]
        pts[..., base, :] = mcp
        pts[..., base + 1 : base + 4, :] = np.asarray(mcp) + np.cumsum(seg, axis=-2)
    return pts


@dataclass(frozen=True)
class GestureTemplate:
    label: str
    flexion: tuple  # 5x3 degrees
    spread: float = 1.0
    sigma_art: float = 6.0  # degrees of per-joint jitter
    rotation_deg: float = 45.0
    scale_range: tuple = (0.7, 1.3)

    @property
    def landmarks(self) -> np.ndarray:
        return hand_skeleton(self.flexion, self.spread)

    def sample_pose(self, rng: np.random.Generator, extra_flex=None) -> np.ndarray:
        """One jittered pose; ``extra_flex`` (``(..., 5, 3)`` degrees) adds
        articulation on top and yields one pose per leading index."""
        flex = np.asarray(self.flexion, dtype=float)
        if self.sigma_art > 0:
            flex = flex + rng.normal(0.0, self.sigma_art, size=flex.shape)
        if extra_flex is not None:
            flex = flex + extra_flex
        spread = self.spread * (1.0 + 0.15 * rng.standard_normal()) if self.sigma_art > 0 else self.spread
        return hand_skeleton(flex, spread)


OPEN = GestureTemplate("open", ((0, 5, 5), (5, 5, 3), (5, 5, 3), (5, 5, 3), (5, 5, 3)), spread=1.0)
CLOSED = GestureTemplate("closed", ((40, 40, 30), (85, 100, 65), (85, 100, 65), (85, 100, 65), (85, 100, 65)),
                         spread=0.3)
# fingers wrapped around a held object: half-curled C shape
OCCUPIED = GestureTemplate("occupied", ((25, 25, 15), (45, 45, 30), (45, 45, 30), (45, 45, 30), (45, 45, 30)),
                           spread=0.4)
DEFAULT_GESTURE_TEMPLATES = (OPEN, CLOSED, OCCUPIED)


@dataclass(frozen=True)
class MovementTemplate:
    """Palm kinematics of one movement class.

    ``pattern`` is ``drift`` (slow translation), ``beckon`` (wrist pitch plus
    finger curl, the "give it to me" motion) or ``sweep`` (in-plane lateral
    wave). ``speed`` is the target mean palm speed in m/s; ``freq`` the
    oscillation frequency in Hz.
    """

    label: str
    pattern: str
    speed: tuple
    freq: tuple = (0.0, 0.0)
    curl_deg: float = 0.0
    pose: GestureTemplate = OPEN


DEFAULT_MOVEMENT_TEMPLATES = (
    MovementTemplate("low_urgency", "drift", speed=(0.0, 0.03)),
    MovementTemplate("medium_urgency", "beckon", speed=(0.065, 0.14), freq=(0.6, 1.0), curl_deg=25.0),
    MovementTemplate("high_urgency", "beckon", speed=(0.28, 0.45), freq=(1.5, 2.2), curl_deg=45.0),
    MovementTemplate("go_away", "sweep", speed=(0.15, 0.35), freq=(0.8, 1.4)),
)

# wrist travel per radian of hand rotation (hand units), in phase with it
_WRIST_COUPLING = 0.5


@dataclass(frozen=True)
class Placement:
    rotation: np.ndarray
    size: float  # image units per hand unit
    offset: np.ndarray  # image position of the wrist


def random_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    a, b, c = np.radians(rng.uniform(-max_deg, max_deg, size=3))
    ca, sa, cb, sb, cc, sc = math.cos(a), math.sin(a), math.cos(b), math.sin(b), math.cos(c), math.sin(c)
    rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
    return rz @ ry @ rx


def random_placement(rng: np.random.Generator, template: GestureTemplate, base_size: float = 0.15) -> Placement:
    rot = random_rotation(rng, template.rotation_deg)
    size = base_size * rng.uniform(*template.scale_range)
    offset = np.array([rng.uniform(0.3, 0.7), rng.uniform(0.35, 0.75), rng.uniform(-0.05, 0.05)])
    return Placement(rot, size, offset)


def _place(pts: np.ndarray, pl: Placement) -> np.ndarray:
    return pl.size * (np.asarray(pts) @ pl.rotation.T) + pl.offset


def _rot_axis(axis: int, angle) -> np.ndarray:
    """Rotation matrices about hand-frame x (axis 0) or z (axis 2)."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    if axis == 0:
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    else:
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    return np.moveaxis(np.array(rows), (0, 1), (-2, -1))


def _motion_local(template: MovementTemplate, pose: np.ndarray, curl: np.ndarray, params: dict, t: np.ndarray,
                  pose_with) -> np.ndarray:
    """Hand-unit landmarks for each time in ``t`` before placement and noise."""
    if template.pattern == "drift":
        return pose[None] + params["velocity"] * t[:, None, None]
    amp, freq, phase = params["amp"], params["freq"], params["phase"]
    arg = 2 * math.pi * freq * t + phase
    theta = amp * np.sin(arg)
    if template.pattern == "beckon":
        # fingers curl in as the hand pitches toward the user
        frac = 0.5 * (1.0 + np.sin(arg))
        extra = np.zeros((len(t), 5, 3))
        extra[:, 1:, :] = curl * frac[:, None, None]
        local = pose_with(extra)
        axis, wrist_dir = 0, _TOWARD_CAMERA
    else:
        local = np.broadcast_to(pose, (len(t),) + pose.shape)
        axis, wrist_dir = 2, np.array([1.0, 0.0, 0.0])
    rot = _rot_axis(axis, theta)
    return np.einsum("nij,nkj->nki", rot, local) + _WRIST_COUPLING * theta[:, None, None] * wrist_dir


def palm_speed(raw: np.ndarray, dt: float = DEFAULT_DT) -> float:
    """Mean palm-center speed of a raw frame sequence, in m/s.

    Image units are converted through the rigid wrist-to-middle-MCP span.
    """
    raw = np.asarray(raw)
    scale = np.linalg.norm(raw[0, 9] - raw[0, 0]) / _WRIST_TO_MCP9
    palm = raw[:, list(PALM_IDS)].mean(axis=1)
    step = np.linalg.norm(np.diff(palm, axis=0), axis=1)
    return float(step.mean() / dt / scale * HAND_LENGTH_M)


def kinematic_label(raw: np.ndarray, dt: float = DEFAULT_DT) -> str:
    """Hand-coded movement classifier from palm kinematics alone.

    Palm motion relative to the wrist that runs mostly along the hand's
    lateral axis is a sweep (go_away); otherwise the mean palm speed picks
    low/medium/high urgency.
    """
    raw = np.asarray(raw)
    up = raw[0, 9] - raw[0, 0]
    up /= np.linalg.norm(up)
    lateral = raw[0, 5] - raw[0, 17]
    lateral -= lateral.dot(up) * up
    lateral /= np.linalg.norm(lateral)
    normal = np.cross(up, lateral)
    rel = raw[:, list(PALM_IDS)].mean(axis=1) - raw[:, 0]
    drel = np.diff(rel, axis=0)
    lat_e = float((drel @ lateral) ** 2 @ np.ones(len(drel)))
    nor_e = float((drel @ normal) ** 2 @ np.ones(len(drel)))
    speed = palm_speed(raw, dt)
    if lat_e + nor_e > 1e-12 and lat_e > nor_e:
        return "go_away"
    if speed < 0.05:
        return "low_urgency"
    if speed < 0.2:
        return "medium_urgency"
    return "high_urgency"


def render_motion(
    template: MovementTemplate,
    n_frames: int,
    rng: np.random.Generator,
    noise: float = 0.02,
    placement: Placement | None = None,
    dt: float = DEFAULT_DT,
    target_speed: float | None = None,
) -> np.ndarray:
    """Raw (n_frames, 21, 3) image-space landmarks for one movement sample.

    Oscillation amplitude is calibrated on the noiseless trajectory so the
    realised mean palm speed equals the drawn target speed.
    """
    pose_seed = int(rng.integers(2**32))

    def pose_with(extra=None):
        # the same articulation jitter for every frame of the sample
        return template.pose.sample_pose(np.random.default_rng(pose_seed), extra)

    pose = pose_with()
    pl = placement if placement is not None else random_placement(rng, template.pose)
    speed = target_speed if target_speed is not None else rng.uniform(*template.speed)
    t = np.arange(n_frames) * dt
    if template.pattern == "drift":
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        params = {"velocity": direction * speed / HAND_LENGTH_M}
        curl = np.zeros(3)
    else:
        freq = rng.uniform(*template.freq)
        params = {"amp": 0.2, "freq": freq, "phase": rng.uniform(0, 2 * math.pi)}
        curl = np.full(3, template.curl_deg)
    local = _motion_local(template, pose, curl, params, t, pose_with)
    if template.pattern != "drift" and speed > 0:
        for _ in range(3):
            measured = palm_speed(_place(local, pl), dt)
            params["amp"] *= speed / measured
            local = _motion_local(template, pose, curl, params, t, pose_with)
    if noise > 0:
        local = local + rng.normal(0.0, noise, size=local.shape)
    return _place(local, pl)


def _palm_pixel(raw_frame: np.ndarray, depth: float) -> PixelObservation:
    c = raw_frame[list(PALM_IDS)].mean(axis=0)
    u = float(np.clip(c[0] * IMAGE_W, 0, IMAGE_W - 1e-6))
    v = float(np.clip(c[1] * IMAGE_H, 0, IMAGE_H - 1e-6))
    return PixelObservation(u, v, depth)


def frames_from_raw(raw: np.ndarray, t0: float, dt: float = DEFAULT_DT, depth: float | None = 0.8,
                    anchor: PixelObservation | None = None) -> list[LandmarkFrame]:
    """Wrap raw landmark arrays as stream frames with palm pixels.

    With ``anchor`` the palm pixel track is shifted so that its mean sits on
    the anchor pixel, with the anchor depth.
    """
    raw = np.asarray(raw)
    frames = []
    shift = np.zeros(3)
    if anchor is not None:
        mean_palm = raw[:, list(PALM_IDS)].mean(axis=(0, 1))
        shift = np.array([anchor.u / IMAGE_W, anchor.v / IMAGE_H, 0.0]) - mean_palm
        shift[2] = 0.0
        depth = anchor.depth
    for k, pts in enumerate(raw):
        pts = pts + shift
        palm = _palm_pixel(pts, depth) if depth is not None else None
        arr = np.round(pts, 12)
        arr.setflags(write=False)
        frames.append(LandmarkFrame(round(t0 + k * dt, 9), True, arr, palm))
    return frames


@dataclass(eq=False)
class LabeledSet:
    x: np.ndarray  # (N, 63) poses or (N, 30, 63) windows
    y: np.ndarray
    labels: tuple
    frames: list = field(default_factory=list)  # per sample: list of LandmarkFrame
    raw: list = field(default_factory=list)  # per sample: raw (n, 21, 3) before normalization

    def __len__(self):
        return len(self.y)


def _class_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def gen_gesture_set(templates=DEFAULT_GESTURE_TEMPLATES, n_per_class: int = 1000, seed: int = 0,
                    noise: float = 0.02) -> LabeledSet:
    """Balanced static-gesture samples, one frame each, normalized."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = tuple(t.label for t in templates)
    xs, ys, frames, raws = [], [], [], []
    for k, tmpl in enumerate(templates):
        rng = _class_rng(seed, k)
        for _ in range(n_per_class):
            pose = tmpl.sample_pose(rng)
            if noise > 0:
                pose = pose + rng.normal(0.0, noise, size=pose.shape)
            pl = random_placement(rng, tmpl)
            raw = _place(pose, pl)[None]
            depth = float(rng.uniform(0.5, 1.0))
            fr = frames_from_raw(raw, 0.0, depth=depth)[0]
            xs.append(normalize_landmarks(fr.landmarks))
            ys.append(k)
            frames.append([fr])
            raws.append(raw)
    return LabeledSet(np.array(xs), np.array(ys), labels, frames, raws)


def gen_movement_set(templates=DEFAULT_MOVEMENT_TEMPLATES, n_per_class: int = 600, seed: int = 0,
                     noise: float = 0.02, n_frames: int = WINDOW_LEN, dt: float = DEFAULT_DT) -> LabeledSet:
    """Balanced 30-frame movement windows, each frame normalized."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = tuple(t.label for t in templates)
    xs, ys, frames, raws = [], [], [], []
    for k, tmpl in enumerate(templates):
        rng = _class_rng(seed, k)
        for _ in range(n_per_class):
            raw = render_motion(tmpl, n_frames, rng, noise=noise, dt=dt)
            depth = float(rng.uniform(0.5, 1.0))
            fr = frames_from_raw(raw, 0.0, dt, depth=depth)
            xs.append(np.stack([normalize_landmarks(f.landmarks) for f in fr]))
            ys.append(k)
            frames.append(fr)
            raws.append(raw)
    return LabeledSet(np.array(xs), np.array(ys), labels, frames, raws)


# file output --------------------------------------------------------------

SAMPLE_GAP_S = 1.0


def write_set(ds: LabeledSet, out_dir, stem: str, dt: float = DEFAULT_DT) -> tuple[Path, Path]:
    """Write ``<stem>.jsonl`` plus ``<stem>_labels.csv`` (sample_id,label).

    Samples follow each other in one stream separated by a one-second gap, so
    splitting the stream at gaps recovers the samples.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = out_dir / f"{stem}.jsonl"
    labels_csv = out_dir / f"{stem}_labels.csv"
    t0 = 0.0
    with jsonl.open("w") as fh:
        for sample in ds.frames:
            shifted = [replace(f, t=round(t0 + k * dt, 9)) for k, f in enumerate(sample)]
            dump_stream(shifted, fh)
            t0 = shifted[-1].t + SAMPLE_GAP_S
    with labels_csv.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for i, y in enumerate(ds.y):
            w.writerow([i, ds.labels[y]])
    return jsonl, labels_csv


class DatasetError(ValueError):
    pass


def read_set(jsonl, labels_csv, label_names, dt: float = DEFAULT_DT) -> LabeledSet:
    """Load a dataset written by :func:`write_set`.

    One-frame samples give a pose matrix; longer samples give windows.
    """
    with open(jsonl) as fh:
        frames = parse_stream(fh)
    segments = trim(frames, dt)
    with open(labels_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(segments):
        raise DatasetError(f"{len(segments)} samples in stream but {len(rows)} labels")
    index = {name: i for i, name in enumerate(label_names)}
    ys = []
    for row in rows:
        if row.get("label") not in index:
            raise DatasetError(f"unknown label {row.get('label')!r} for sample {row.get('sample_id')}")
        ys.append(index[row["label"]])
    lengths = {len(s) for s in segments}
    if len(lengths) > 1:
        raise DatasetError(f"samples have mixed lengths {sorted(lengths)}")
    poses = [np.stack([normalize_landmarks(f.landmarks) for f in seg]) for seg in segments]
    x = np.array(poses)
    if lengths == {1}:
        x = x[:, 0]
    return LabeledSet(x, np.array(ys, dtype=int), tuple(label_names), segments)
