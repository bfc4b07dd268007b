"""Pinhole deprojection and rigid-transform chains from camera to robot base.

Points are plain ``numpy`` arrays of shape ``(3,)`` in meters. Transforms keep
rotation and translation separately so the orthonormality invariant can be
checked directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ORTHO_TOL = 1e-9
# compose re-orthonormalizes before drift can reach ORTHO_TOL
DRIFT_TOL = 1e-10


class DomainError(ValueError):
    """Input outside the domain of a geometric operation."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    uc: float
    vc: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.uc < self.width and 0 <= self.vc < self.height):
            raise DomainError(f"principal point ({self.uc}, {self.vc}) outside {self.width}x{self.height} image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.uc], [0.0, self.fy, self.vc], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PixelObservation:
    u: float
    v: float
    depth: float


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite point {arr}")
    return arr


def _polar(r: np.ndarray) -> np.ndarray:
    # nearest orthonormal matrix in Frobenius norm
    u, _, vt = np.linalg.svd(r)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] *= -1
        q = u @ vt
    return q


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = as_point(self.translation)
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL, rtol=0):
            raise DomainError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise DomainError("rotation has determinant != +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.ravel().tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        rot = d.get("rotation")
        trans = d.get("translation")
        if rot is None or len(rot) != 9 or trans is None or len(trans) != 3:
            raise DomainError("transform needs rotation[9] (row-major) and translation[3]")
        return cls(np.reshape(rot, (3, 3)), trans)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def deproject(intr: CameraIntrinsics, obs: PixelObservation) -> np.ndarray:
    """Lift a pixel with depth to a camera-frame point.

    Depth is the Z coordinate along the optical axis, not the ray length.
    """
    if not (0 <= obs.u < intr.width and 0 <= obs.v < intr.height):
        raise DomainError(f"pixel ({obs.u}, {obs.v}) outside {intr.width}x{intr.height} image")
    if not obs.depth > 0:
        raise DomainError(f"depth must be positive, got {obs.depth}")
    d = obs.depth
    return np.array([d * (obs.u - intr.uc) / intr.fx, d * (obs.v - intr.vc) / intr.fy, d])


def project(intr: CameraIntrinsics, p) -> PixelObservation:
    """Inverse of :func:`deproject` for points in front of the camera."""
    x, y, z = as_point(p)
    if not z > 0:
        raise DomainError(f"point behind camera (z={z})")
    return PixelObservation(u=intr.fx * x / z + intr.uc, v=intr.fy * y / z + intr.vc, depth=z)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform that applies ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    if np.max(np.abs(r.T @ r - np.eye(3))) > DRIFT_TOL:
        r = _polar(r)
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def apply(t: RigidTransform, p) -> np.ndarray:
    return t.rotation @ as_point(p) + t.translation


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def pixel_to_base(
    intr: CameraIntrinsics,
    obs: PixelObservation,
    eye_to_hand: RigidTransform,
    ee_to_base: RigidTransform,
) -> np.ndarray:
    """Camera pixel + depth to a point in the robot base frame."""
    return apply(compose(ee_to_base, eye_to_hand), deproject(intr, obs))


@dataclass(frozen=True)
class Calibration:
    intrinsics: CameraIntrinsics
    eye_to_hand: RigidTransform
    ee_to_base: RigidTransform

    def to_dict(self) -> dict:
        i = self.intrinsics
        return {
            "intrinsics": {"fx": i.fx, "fy": i.fy, "uc": i.uc, "vc": i.vc, "width": i.width, "height": i.height},
            "eye_to_hand": self.eye_to_hand.to_dict(),
            "ee_to_base": self.ee_to_base.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Calibration:
        try:
            intr = CameraIntrinsics(**d["intrinsics"])
            return cls(intr, RigidTransform.from_dict(d["eye_to_hand"]), RigidTransform.from_dict(d["ee_to_base"]))
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed calibration: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> Calibration:
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_calibration() -> Calibration:
    """Overhead camera looking straight down at the workspace.

    Camera x follows base x, camera y runs along base -y, optical axis
    points along base -z. The camera sits 1.2 m above the base origin,
    offset 0.2 m in y; the end-effector registration pose is (0, 0, 0.4).
    """
    intr = CameraIntrinsics(fx=600.0, fy=600.0, uc=320.0, vc=240.0)
    eye_to_hand = RigidTransform(np.diag([1.0, -1.0, -1.0]), [0.0, 0.2, 0.8])
    ee_to_base = RigidTransform(np.eye(3), [0.0, 0.0, 0.4])
    return Calibration(intr, eye_to_hand, ee_to_base)
