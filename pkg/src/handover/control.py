"""Cartesian PID and LQR velocity controllers and the urgency supervisor.

The plant is the end-effector position error under a velocity command,
``de/dt = -u``, i.e. the LQR problem with ``A = 0`` and ``B = I``. Both
controllers return a velocity toward the target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DT = 1.0 / 15.0
MODES = ("lqr", "pid")
ABORT = "abort"


class ControllerFault(ValueError):
    pass


class CareSolverError(RuntimeError):
    def __init__(self, msg: str, residuals=()):
        super().__init__(msg)
        self.residuals = list(residuals)


@dataclass(frozen=True, eq=False)
class ControlCommand:
    velocity: np.ndarray
    mode: str
    urgency: str = "low_urgency"
    saturated: bool = False

    @classmethod
    def zero(cls, mode: str = "lqr", urgency: str = "low_urgency") -> ControlCommand:
        return cls(np.zeros(3), mode, urgency, False)


def _finite_error(error) -> np.ndarray:
    e = np.asarray(error, dtype=float).reshape(3)
    if not np.all(np.isfinite(e)):
        raise ControllerFault(f"non-finite error {e}")
    return e


def clamp_norm(v: np.ndarray, cap: float | None) -> tuple[np.ndarray, bool]:
    if cap is None:
        return v, False
    n = float(np.linalg.norm(v))
    if n > cap:
        return v * (cap / n), True
    return v, False


# PID -----------------------------------------------------------------------


@dataclass(frozen=True)
class PidGains:
    kp: float | tuple = 0.1
    ki: float | tuple = 0.0
    kd: float | tuple = 0.2
    dt: float = DT

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("kp", "ki", "kd"):
            g = np.asarray(getattr(self, name), dtype=float)
            if not (np.all(np.isfinite(g)) and np.all(g >= 0)):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initialized: bool = False


def pid_step(gains: PidGains, state: PidState, error, cap: float | None = None,
             urgency: str = "low_urgency") -> tuple[ControlCommand, PidState]:
    """One PID update per axis.

    The first call after a reset seeds the previous error with the current
    one, so no derivative kick. While the output is clamped the integral is
    not advanced.
    """
    e = _finite_error(error)
    prev = state.prev_error if state.initialized else e
    integral = state.integral + e * gains.dt
    deriv = (e - prev) / gains.dt
    kp, ki, kd = (np.asarray(g, dtype=float) for g in (gains.kp, gains.ki, gains.kd))
    u = kp * e + ki * integral + kd * deriv
    u, saturated = clamp_norm(u, cap)
    if saturated:
        integral = state.integral
    return ControlCommand(u, "pid", urgency, saturated), PidState(integral, e.copy(), True)


# LQR -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LqrProblem:
    A: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    B: np.ndarray = field(default_factory=lambda: np.eye(3))
    Q: np.ndarray = field(default_factory=lambda: np.eye(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name in "ABQR":
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ValueError("inconsistent LQR matrix shapes")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12) or np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T, atol=1e-12) or np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")


@dataclass(frozen=True, eq=False)
class LqrGain:
    K: np.ndarray
    P: np.ndarray
    residual: float = 0.0
    iterations: int = 0


def care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def solve_lyapunov(F: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Solve ``F^T X + X F + M = 0`` through the Kronecker form."""
    n = F.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(F^T X) = (F^T kron I) x,  vec(X F) = (I kron F^T) x
    op = np.kron(F.T, eye) + np.kron(eye, F.T)
    try:
        x = np.linalg.solve(op, -M.ravel())
    except np.linalg.LinAlgError as exc:
        raise CareSolverError(f"singular Lyapunov operator: {exc}") from None
    X = x.reshape(n, n)
    return 0.5 * (X + X.T)


def is_stabilizable(A, B, tol: float = 1e-9) -> bool:
    """PBH test on the eigenvalues with nonnegative real part."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -tol:
            m = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(m, tol=1e-8) < n:
                return False
    return True


def initial_gain(A, B) -> np.ndarray:
    """A stabilizing starting gain.

    Zero when A is already Hurwitz; otherwise Bass's construction: solve
    ``(A + bI) Z + Z (A + bI)^T = 2 B B^T`` with ``b`` shifting every
    eigenvalue of ``A`` to the right half-plane and take ``K = B^T Z^-1``.
    """
    eig = np.linalg.eigvals(A)
    if eig.real.max() < 0:
        return np.zeros((B.shape[1], A.shape[0]))
    beta = max(0.0, -eig.real.min()) + 1.0
    shifted = -(A + beta * np.eye(A.shape[0]))
    # shifted Z + Z shifted^T + 2BB^T = 0, written as Lyapunov in F = shifted^T
    Z = solve_lyapunov(shifted.T, 2.0 * B @ B.T)
    # Z is singular on the uncontrollable subspace; the pseudo-inverse leaves
    # those (stable, for a stabilizable pair) modes without feedback
    K = B.T @ np.linalg.pinv(Z, rcond=1e-10, hermitian=True)
    if np.linalg.eigvals(A - B @ K).real.max() >= 0:
        raise CareSolverError("could not build a stabilizing initial gain")
    return K


def solve_care(problem: LqrProblem, K0=None, max_iter: int = 100, tol: float = 1e-10,
               accept: float = 1e-8) -> LqrGain:
    """Newton-Kleinman iteration for ``A^T P + P A - P B R^-1 B^T P + Q = 0``.

    Each step solves the closed-loop Lyapunov equation for the current gain.
    Stops once the Frobenius residual drops below ``tol``, or when it stops
    improving while already below ``accept``.
    """
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    if not is_stabilizable(A, B):
        raise CareSolverError("(A, B) is not stabilizable")
    K = initial_gain(A, B) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    if np.linalg.eigvals(A - B @ K).real.max() >= 0:
        raise CareSolverError("initial gain does not stabilize the closed loop")
    residuals = []
    best = None
    for it in range(1, max_iter + 1):
        Acl = A - B @ K
        P = solve_lyapunov(Acl, Q + K.T @ R @ K)
        K = np.linalg.solve(R, B.T @ P)
        res = float(np.linalg.norm(care_residual(A, B, Q, R, P)))
        residuals.append(res)
        if not math.isfinite(res):
            raise CareSolverError("residual became non-finite", residuals)
        if best is None or res < best[0]:
            best = (res, P, K, it)
        if res < tol:
            break
        if len(residuals) > 2 and res >= residuals[-2] and best[0] < accept:
            break
    res, P, K, it = best
    if res >= accept:
        raise CareSolverError(f"Newton-Kleinman did not converge (residual {res:.3e})", residuals)
    return LqrGain(K, P, res, it)


def lqr_step(gain: LqrGain, error, speed_cap: float | None = None, urgency: str = "low_urgency") -> ControlCommand:
    """Velocity ``K @ error`` toward the target, norm-clamped to the cap."""
    e = _finite_error(error)
    u, saturated = clamp_norm(gain.K @ e, speed_cap)
    return ControlCommand(u, "lqr", urgency, saturated)


# supervisor ----------------------------------------------------------------


@dataclass(frozen=True)
class SpeedCaps:
    low: float = 0.10
    med: float = 0.25
    high: float = 0.50


def select_mode(urgency: str, current_mode: str | None = None, caps: SpeedCaps = SpeedCaps()):
    """Controller and speed cap for a debounced urgency label.

    ``go_away`` yields ``(ABORT, 0.0)``: the workflow sends the arm home and
    no tracking command is issued.
    """
    table = {
        "low_urgency": ("lqr", caps.low),
        "medium_urgency": ("lqr", caps.med),
        "high_urgency": ("pid", caps.high),
        "go_away": (ABORT, 0.0),
    }
    if urgency not in table:
        raise ValueError(f"unknown urgency {urgency!r}")
    return table[urgency]


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    pid: PidGains = PidGains()
    lqr: LqrProblem = field(default_factory=LqrProblem)
    caps: SpeedCaps = SpeedCaps()
    dt: float = DT

    def to_dict(self) -> dict:
        def arr(a):
            return np.asarray(a).tolist()

        return {
            "pid": {"kp": arr(self.pid.kp), "ki": arr(self.pid.ki), "kd": arr(self.pid.kd)},
            "lqr": {"A": arr(self.lqr.A), "B": arr(self.lqr.B), "Q": arr(self.lqr.Q), "R": arr(self.lqr.R)},
            "caps": {"low": self.caps.low, "med": self.caps.med, "high": self.caps.high},
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ControllerConfig:
        dt = float(d.get("dt", DT))
        p = d.get("pid", {})
        pid = PidGains(
            kp=_gain(p.get("kp", 0.1)), ki=_gain(p.get("ki", 0.0)), kd=_gain(p.get("kd", 0.2)), dt=dt
        )
        lq = d.get("lqr", {})
        defaults = LqrProblem()
        lqr = LqrProblem(
            A=lq.get("A", defaults.A), B=lq.get("B", defaults.B), Q=lq.get("Q", defaults.Q), R=lq.get("R", defaults.R)
        )
        c = d.get("caps", {})
        caps = SpeedCaps(low=c.get("low", 0.10), med=c.get("med", 0.25), high=c.get("high", 0.50))
        return cls(pid, lqr, caps, dt)

    @classmethod
    def load(cls, path) -> ControllerConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _gain(g):
    return tuple(float(v) for v in g) if isinstance(g, (list, tuple)) else float(g)


class Supervisor:
    """Owns one PID state and one LQR gain and switches between them.

    Controller state is reset whenever the active mode changes.
    """

    def __init__(self, config: ControllerConfig = None):
        self.config = config or ControllerConfig()
        self.gain = solve_care(self.config.lqr)
        self.mode = "lqr"
        self.cap = self.config.caps.low
        self.urgency = "low_urgency"
        self.pid_state = PidState()

    def set_urgency(self, urgency: str) -> str:
        """Apply a debounced urgency; returns the resulting mode (or ABORT)."""
        mode, cap = select_mode(urgency, self.mode, self.config.caps)
        if mode == ABORT:
            return ABORT
        self.set_mode(mode, cap, urgency)
        return mode

    def set_mode(self, mode: str, cap: float, urgency: str | None = None) -> None:
        if mode != self.mode:
            self.pid_state = PidState()
        self.mode, self.cap = mode, cap
        if urgency is not None:
            self.urgency = urgency

    def reset(self) -> None:
        self.pid_state = PidState()

    def command(self, error) -> ControlCommand:
        if self.mode == "pid":
            cmd, self.pid_state = pid_step(self.config.pid, self.pid_state, error, self.cap, self.urgency)
            return cmd
        return lqr_step(self.gain, error, self.cap, self.urgency)


# step response -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepResponse:
    mode: str
    t: np.ndarray
    error: np.ndarray  # (n, 3)
    velocity: np.ndarray  # (n, 3)

    def metrics(self, band: float = 0.05) -> dict:
        e0 = self.error[0]
        over = 0.0
        for ax in range(3):
            if e0[ax] != 0:
                crossing = -self.error[:, ax] * math.copysign(1.0, e0[ax])
                over = max(over, float(crossing.max()) / abs(e0[ax]))
        over = max(over, 0.0)
        norms = np.linalg.norm(self.error, axis=1)
        outside = np.nonzero(norms > band * norms[0])[0]
        if len(outside) == 0:
            settle = 0.0
        elif outside[-1] == len(norms) - 1:
            settle = None
        else:
            settle = float(self.t[outside[-1] + 1])
        return {"overshoot": over, "settling_time_5pct": settle, "final_error": float(norms[-1])}

    def rows(self):
        for k in range(len(self.t)):
            yield [self.t[k], *self.error[k], *self.velocity[k], self.mode]


def step_response(config: ControllerConfig, mode: str, offset=(1.0, 0.0, 0.0), duration: float = 60.0,
                  cap: float | None = None) -> StepResponse:
    """Error trajectory after a step in target position.

    Integrates ``e <- e - dt * u`` with forward Euler; the command is not
    clamped unless ``cap`` is given.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    dt = config.dt
    n = int(round(duration / dt)) + 1
    e = np.asarray(offset, dtype=float).copy()
    gain = solve_care(config.lqr) if mode == "lqr" else None
    pid = replace(config.pid, dt=dt)
    state = PidState()
    t = np.arange(n) * dt
    errs = np.empty((n, 3))
    vels = np.empty((n, 3))
    for k in range(n):
        if mode == "lqr":
            cmd = lqr_step(gain, e, cap)
        else:
            cmd, state = pid_step(pid, state, e, cap)
        errs[k] = e
        vels[k] = cmd.velocity
        e = e - dt * cmd.velocity
    return StepResponse(mode, t, errs, vels)
