"""Trajectory container, validation, and RBF temporal resampling.

A trajectory is the unit flowing through the pipeline: wrist position,
wrist orientation as fixed-axis RPY, and a hand channel block (16 joints,
or a single aperture for the gripper embodiment).  Resampling rescales
every trajectory to a common length so batches align index-to-index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import TooShortError
from .geometry import matrix_to_quat, matrix_to_rpy, quat_to_matrix, rpy_to_matrix

RBF_RIDGE = 1e-10
DEFAULT_RESAMPLE_LEN = 200


@dataclass
class Trajectory:
    times: np.ndarray  # (n,) seconds, strictly increasing
    wrist_pos: np.ndarray  # (n, 3) meters
    wrist_rpy: np.ndarray  # (n, 3) radians, fixed-axis
    hand: np.ndarray  # (n, dh) radians (dh=16) or aperture (dh=1)
    embodiment: str = "hand16"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.wrist_pos = np.asarray(self.wrist_pos, dtype=float)
        self.wrist_rpy = np.asarray(self.wrist_rpy, dtype=float)
        self.hand = np.asarray(self.hand, dtype=float)

    def __len__(self) -> int:
        return len(self.times)

    def wrist6(self) -> np.ndarray:
        """(n, 6) position + rpy block."""
        return np.concatenate([self.wrist_pos, self.wrist_rpy], axis=1)


def validate(traj: Trajectory) -> list[str]:
    """All invariant violations, empty when the trajectory is well formed."""
    problems = []
    n = len(traj.times)
    if n < 2:
        problems.append("length: fewer than 2 steps")
    for name, arr, width in (
        ("wrist_pos", traj.wrist_pos, 3),
        ("wrist_rpy", traj.wrist_rpy, 3),
        ("hand", traj.hand, None),
    ):
        if arr.ndim != 2 or arr.shape[0] != n or (width and arr.shape[1] != width):
            problems.append(f"{name} shape: expected ({n}, {width or 'dh'}), got {arr.shape}")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"{name} finite: contains NaN or inf")
    if n >= 2 and not np.all(np.diff(traj.times) > 0):
        problems.append("times: not strictly increasing")
    if not np.all(np.isfinite(traj.times)):
        problems.append("times finite: contains NaN or inf")
    return problems


def _rbf_channel(u_in: np.ndarray, values: np.ndarray, u_out: np.ndarray) -> np.ndarray:
    """Gaussian RBF interpolation of one channel over normalized time.

    One center per input sample, width = mean center spacing, ridge-damped
    solve.  A line through the endpoints is removed first so constants and
    trends pass through exactly and boundary ringing stays small.
    """
    a = values[0]
    b = values[-1] - values[0]
    resid = values - (a + b * u_in)
    sigma = float(np.mean(np.diff(u_in)))
    k = np.exp(-((u_in[:, None] - u_in[None, :]) ** 2) / (2 * sigma * sigma))
    lam = np.linalg.solve(k + RBF_RIDGE * np.eye(len(u_in)), resid)
    k_out = np.exp(-((u_out[:, None] - u_in[None, :]) ** 2) / (2 * sigma * sigma))
    return k_out @ lam + a + b * u_out


def _unwrap(angles: np.ndarray) -> np.ndarray:
    return np.unwrap(angles, axis=0)


def resample_rbf(traj: Trajectory, n: int = DEFAULT_RESAMPLE_LEN) -> Trajectory:
    """Resample every channel to n uniform times spanning the original range.

    Orientation channels are unwrapped before fitting so +-pi jumps don't
    leak ringing into the interpolant.
    """
    if n < 2:
        raise ValueError(f"target length must be >= 2, got {n}")
    if len(traj) < 2:
        raise TooShortError("need at least 2 samples to resample")
    t0, t1 = traj.times[0], traj.times[-1]
    u_in = (traj.times - t0) / (t1 - t0)
    u_out = np.linspace(0.0, 1.0, n)
    channels = np.concatenate([traj.wrist_pos, _unwrap(traj.wrist_rpy), traj.hand], axis=1)
    out = np.empty((n, channels.shape[1]))
    for c in range(channels.shape[1]):
        out[:, c] = _rbf_channel(u_in, channels[:, c], u_out)
    return Trajectory(
        times=t0 + u_out * (t1 - t0),
        wrist_pos=out[:, 0:3],
        wrist_rpy=out[:, 3:6],
        hand=out[:, 6:],
        embodiment=traj.embodiment,
    )


@dataclass
class DemoRecord:
    """One training sample: a trajectory plus the policy's conditioning inputs."""

    trajectory: Trajectory
    features: np.ndarray  # (512,) ingested visual embedding of the first frame
    init_hand: np.ndarray  # (dh,)
    init_wrist: np.ndarray  # (6,) position + rpy
    task: str = ""
    source: str = "human-retargeted"  # or "robot-demo"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.init_hand = np.asarray(self.init_hand, dtype=float)
        self.init_wrist = np.asarray(self.init_wrist, dtype=float)
        if self.features.shape != (512,):
            raise ValueError(f"features must have length 512, got {self.features.shape}")
        first_wrist = self.trajectory.wrist6()[0]
        if (
            np.max(np.abs(self.init_wrist - first_wrist)) > 1e-9
            or np.max(np.abs(self.init_hand - self.trajectory.hand[0])) > 1e-9
        ):
            raise ValueError("init values must equal trajectory step 0")

    @staticmethod
    def from_trajectory(traj: Trajectory, features, task="", source="human-retargeted"):
        return DemoRecord(
            trajectory=traj,
            features=features,
            init_hand=traj.hand[0].copy(),
            init_wrist=traj.wrist6()[0].copy(),
            task=task,
            source=source,
        )


def trajectory_to_lines(traj: Trajectory) -> list[str]:
    """JSON-lines form: one step per line, wrist as {t, q}."""
    lines = []
    for i in range(len(traj)):
        quat = matrix_to_quat(rpy_to_matrix(*traj.wrist_rpy[i]))
        lines.append(
            json.dumps(
                {
                    "t": float(traj.times[i]),
                    "wrist": {
                        "t": [float(v) for v in traj.wrist_pos[i]],
                        "q": [float(v) for v in quat],
                    },
                    "hand": [float(v) for v in traj.hand[i]],
                }
            )
        )
    return lines


def trajectory_from_lines(lines, embodiment: str = "hand16") -> Trajectory:
    times, pos, rpy, hand = [], [], [], []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        times.append(rec["t"])
        pos.append(rec["wrist"]["t"])
        rpy.append(matrix_to_rpy(quat_to_matrix(rec["wrist"]["q"])))
        hand.append(rec["hand"])
    return Trajectory(
        times=np.array(times),
        wrist_pos=np.array(pos),
        wrist_rpy=np.array(rpy),
        hand=np.array(hand),
        embodiment=embodiment,
    )


def demo_to_dict(rec: DemoRecord) -> dict:
    return {
        "task": rec.task,
        "source": rec.source,
        "features": [float(v) for v in rec.features],
        "times": [float(v) for v in rec.trajectory.times],
        "wrist_pos": rec.trajectory.wrist_pos.tolist(),
        "wrist_rpy": rec.trajectory.wrist_rpy.tolist(),
        "hand": rec.trajectory.hand.tolist(),
        "embodiment": rec.trajectory.embodiment,
    }


def demo_from_dict(d: dict) -> DemoRecord:
    traj = Trajectory(
        times=np.array(d["times"]),
        wrist_pos=np.array(d["wrist_pos"]),
        wrist_rpy=np.array(d["wrist_rpy"]),
        hand=np.array(d["hand"]),
        embodiment=d.get("embodiment", "hand16"),
    )
    return DemoRecord.from_trajectory(
        traj, np.array(d["features"]), task=d.get("task", ""), source=d.get("source", "")
    )


def write_demos(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(demo_to_dict(rec)) + "\n")


def read_demos(path) -> list[DemoRecord]:
    with open(path) as f:
        return [demo_from_dict(json.loads(line)) for line in f if line.strip()]
