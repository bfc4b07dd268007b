"""21-point hand landmark frames: stream format, normalization and windowing.

One JSON object per line::

    {"t": 0.0, "hand_present": true,
     "landmarks": [[x, y, z], ...21],
     "palm_pixel": {"u": 312.0, "v": 201.5, "depth": 0.82}}

``landmarks`` is present iff ``hand_present``. ``palm_pixel`` may only appear
with a hand; a hand frame without it can be classified but not targeted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .geometry import PixelObservation

N_LANDMARKS = 21
N_FEATURES = 3 * N_LANDMARKS
WINDOW_LEN = 30
DEFAULT_DT = 1.0 / 15.0

WRIST = 0
FINGERTIPS = (4, 8, 12, 16, 20)
# wrist + the four finger MCP joints
PALM_IDS = (0, 5, 9, 13, 17)

_COORD_LO, _COORD_HI = -0.5, 1.5
_KEYS = {"t", "hand_present", "landmarks", "palm_pixel"}


class LandmarkParseError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class StreamError(ValueError):
    """Stream-level inconsistency such as non-increasing timestamps."""


class DegeneratePoseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LandmarkFrame:
    t: float
    hand_present: bool
    landmarks: np.ndarray | None = None
    palm_pixel: PixelObservation | None = None

    @property
    def targetable(self) -> bool:
        return self.hand_present and self.palm_pixel is not None

    def to_dict(self) -> dict:
        d: dict = {"t": self.t, "hand_present": self.hand_present}
        if self.hand_present:
            d["landmarks"] = self.landmarks.tolist()
            if self.palm_pixel is not None:
                p = self.palm_pixel
                d["palm_pixel"] = {"u": p.u, "v": p.v, "depth": p.depth}
        return d


@dataclass(frozen=True, eq=False)
class MotionWindow:
    frames: np.ndarray  # (30, 63) normalized poses
    dt: float = DEFAULT_DT
    t_end: float = 0.0

    def __post_init__(self):
        if self.frames.shape != (WINDOW_LEN, N_FEATURES):
            raise ValueError(f"window must be {WINDOW_LEN}x{N_FEATURES}, got {self.frames.shape}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def frame_from_dict(d, line_no: int = 0) -> LandmarkFrame:
    if not isinstance(d, dict):
        raise LandmarkParseError(line_no, "record is not a JSON object")
    extra = set(d) - _KEYS
    if extra:
        raise LandmarkParseError(line_no, f"unknown fields {sorted(extra)}")
    if not _is_number(d.get("t")):
        raise LandmarkParseError(line_no, "missing or non-numeric 't'")
    present = d.get("hand_present")
    if not isinstance(present, bool):
        raise LandmarkParseError(line_no, "'hand_present' must be a boolean")

    if not present:
        if "landmarks" in d or "palm_pixel" in d:
            raise LandmarkParseError(line_no, "landmarks/palm_pixel given without a hand")
        return LandmarkFrame(float(d["t"]), False)

    lms = d.get("landmarks")
    if not isinstance(lms, list) or len(lms) != N_LANDMARKS:
        n = len(lms) if isinstance(lms, list) else "no"
        raise LandmarkParseError(line_no, f"expected {N_LANDMARKS} landmarks, got {n}")
    for i, p in enumerate(lms):
        if not (isinstance(p, list) and len(p) == 3 and all(_is_number(c) for c in p)):
            raise LandmarkParseError(line_no, f"landmark {i} is not a numeric [x, y, z] triple")
        if not (_COORD_LO <= p[0] <= _COORD_HI and _COORD_LO <= p[1] <= _COORD_HI):
            raise LandmarkParseError(line_no, f"landmark {i} x/y outside [{_COORD_LO}, {_COORD_HI}]")
    arr = np.array(lms, dtype=float)

    palm = None
    if "palm_pixel" in d:
        pp = d["palm_pixel"]
        if not (isinstance(pp, dict) and set(pp) == {"u", "v", "depth"} and all(_is_number(pp[k]) for k in pp)):
            raise LandmarkParseError(line_no, "palm_pixel must be {u, v, depth} numbers")
        if pp["depth"] <= 0:
            raise LandmarkParseError(line_no, "palm_pixel depth must be positive")
        palm = PixelObservation(float(pp["u"]), float(pp["v"]), float(pp["depth"]))
    arr.setflags(write=False)
    return LandmarkFrame(float(d["t"]), True, arr, palm)


def iter_stream(lines: Iterable[str]) -> Iterator[LandmarkFrame]:
    """Parse frames lazily; blank lines are skipped."""
    last_t = None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LandmarkParseError(line_no, f"invalid JSON ({exc.msg})") from None
        frame = frame_from_dict(rec, line_no)
        if last_t is not None and frame.t <= last_t:
            raise StreamError(f"line {line_no}: timestamp {frame.t} not after {last_t}")
        last_t = frame.t
        yield frame


def parse_stream(source) -> list[LandmarkFrame]:
    """Parse a whole stream from a string or an iterable of lines."""
    if isinstance(source, str):
        source = source.splitlines()
    return list(iter_stream(source))


def dumps_frame(frame: LandmarkFrame) -> str:
    return json.dumps(frame.to_dict(), separators=(",", ":"))


def dump_stream(frames: Iterable[LandmarkFrame], fh) -> None:
    for f in frames:
        fh.write(dumps_frame(f) + "\n")


def palm_center(landmarks: np.ndarray) -> np.ndarray:
    return np.asarray(landmarks)[list(PALM_IDS)].mean(axis=0)


def normalize_landmarks(landmarks: np.ndarray) -> np.ndarray:
    """Wrist-center and scale so the farthest landmark sits at distance 1.

    Returns the flattened 63-vector. Orientation is left untouched.
    """
    pts = np.asarray(landmarks, dtype=float).reshape(N_LANDMARKS, 3)
    centered = pts - pts[WRIST]
    scale = np.sqrt((centered**2).sum(axis=1)).max()
    if not scale > 1e-12:
        raise DegeneratePoseError("all landmarks coincide with the wrist")
    return (centered / scale).ravel()


def normalize(frame: LandmarkFrame) -> np.ndarray:
    if not frame.hand_present:
        raise ValueError("cannot normalize a frame without a hand")
    return normalize_landmarks(frame.landmarks)


def trim(frames: Sequence[LandmarkFrame], dt: float = DEFAULT_DT) -> list[list[LandmarkFrame]]:
    """Drop hand-absent frames and split at gaps longer than ``2 * dt``."""
    segments: list[list[LandmarkFrame]] = []
    current: list[LandmarkFrame] = []
    for f in frames:
        if not f.hand_present:
            if current:
                segments.append(current)
                current = []
            continue
        if current and f.t - current[-1].t > 2 * dt + 1e-9:
            segments.append(current)
            current = []
        current.append(f)
    if current:
        segments.append(current)
    return segments


def window(poses: Sequence[np.ndarray], t: Sequence[float], dt: float = DEFAULT_DT) -> list[MotionWindow]:
    """Stride-1 sliding windows of 30 poses; windows spanning a gap are skipped."""
    n = len(poses)
    if n < WINDOW_LEN:
        return []
    if len(t) != n:
        raise ValueError("poses and timestamps differ in length")
    t = np.asarray(t, dtype=float)
    gap = np.diff(t) > 2 * dt + 1e-9
    # gaps_before[i] = number of gaps among the first i intervals
    gaps_before = np.concatenate([[0], np.cumsum(gap)])
    stacked = np.asarray(poses, dtype=float).reshape(n, N_FEATURES)
    out = []
    for start in range(n - WINDOW_LEN + 1):
        end = start + WINDOW_LEN - 1
        if gaps_before[end] - gaps_before[start]:
            continue
        out.append(MotionWindow(stacked[start : end + 1].copy(), dt, float(t[end])))
    return out
