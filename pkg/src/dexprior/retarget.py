"""Human-to-robot embodiment transfer.

Fingers: keypoint-vector energy minimization onto the 16-DOF hand (with an
optional distilled network for batch throughput).  Wrist: a four-transform
chain from the hand detector's camera-frame pose through the moving camera
and the gravity-aligned world into the robot frame, followed by workspace
recentering.  Also home to the gripper reduction, low-pass smoothing, and
trajectory augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import pnp
from .errors import LengthMismatchError
from .geometry import (
    AccelSample,
    RigidTransform,
    compose,
    orthonormalize,
    rpy_to_matrix,
    upright_from_accel,
    world_to_robot,
)
from .kinematics import HandChain, _keypoints_batch, clamp, robot_keypoints

# MANO keypoint layout: wrist 0, then 4 joints per finger ending at the tip
WRIST_IDX = 0
TIP_THUMB, TIP_INDEX, TIP_MIDDLE, TIP_RING, TIP_PINKY = 4, 8, 12, 16, 20
FINGERTIP_IDXS = (TIP_THUMB, TIP_INDEX, TIP_MIDDLE, TIP_RING, TIP_PINKY)


@dataclass
class HumanHandFrame:
    """One detected hand: 21 wrist-local 3D keypoints plus optional extras."""

    keypoints: np.ndarray  # (21, 3) meters
    timestamp: float = 0.0
    keypoints_2d: np.ndarray | None = None  # (21, 2) pixels
    theta: np.ndarray | None = None  # (45,) detector pose metadata, unused here
    beta: np.ndarray | None = None  # (10,) detector shape metadata, unused here

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float)
        if self.keypoints.shape != (21, 3) or not np.all(np.isfinite(self.keypoints)):
            raise ValueError("keypoints must be a finite (21, 3) array")
        if self.keypoints_2d is not None:
            self.keypoints_2d = np.asarray(self.keypoints_2d, dtype=float)
            if self.keypoints_2d.shape != (21, 2):
                raise ValueError("keypoints_2d must be (21, 2)")


@dataclass
class KeyVectorSpec:
    """Which keypoint pairs are compared between embodiments, and their scales.

    Robot indices address the keypoint array [palm, tip0..tip3]; human
    indices address the 21-point layout.
    """

    pairs: list[tuple[tuple[int, int], tuple[int, int]]]
    scales: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        if len(self.pairs) < 1 or len(self.scales) != len(self.pairs):
            raise ValueError("need >= 1 pair with one scale each")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be strictly positive")
        self._human = np.asarray([p[0] for p in self.pairs])
        self._robot = np.asarray([p[1] for p in self.pairs])


# A flat canonical human hand (21 MANO-ordered points) used only to size the
# default per-pair scales against the robot chain.
_CANONICAL_FLAT_HUMAN = np.zeros((21, 3))
_CANONICAL_FLAT_HUMAN[1:5] = [[0.025, 0.030, 0.0], [0.045, 0.045, 0.0], [0.060, 0.055, 0.0], [0.072, 0.062, 0.0]]
_CANONICAL_FLAT_HUMAN[5:9] = [[0.040, 0.022, 0.0], [0.070, 0.024, 0.0], [0.092, 0.025, 0.0], [0.110, 0.026, 0.0]]
_CANONICAL_FLAT_HUMAN[9:13] = [[0.040, 0.000, 0.0], [0.072, 0.000, 0.0], [0.096, 0.000, 0.0], [0.115, 0.000, 0.0]]
_CANONICAL_FLAT_HUMAN[13:17] = [[0.038, -0.020, 0.0], [0.066, -0.021, 0.0], [0.088, -0.022, 0.0], [0.105, -0.023, 0.0]]
_CANONICAL_FLAT_HUMAN[17:21] = [[0.035, -0.038, 0.0], [0.058, -0.039, 0.0], [0.078, -0.040, 0.0], [0.095, -0.041, 0.0]]

# Ten default pairs: palm to each tip, thumb to each finger, and the three
# inter-finger tip pairs.  The human pinky maps to the robot ring finger;
# the human ring tip (16) goes unused.
_DEFAULT_PAIRS = [
    ((WRIST_IDX, TIP_THUMB), (0, 1)),
    ((WRIST_IDX, TIP_INDEX), (0, 2)),
    ((WRIST_IDX, TIP_MIDDLE), (0, 3)),
    ((WRIST_IDX, TIP_PINKY), (0, 4)),
    ((TIP_THUMB, TIP_INDEX), (1, 2)),
    ((TIP_THUMB, TIP_MIDDLE), (1, 3)),
    ((TIP_THUMB, TIP_PINKY), (1, 4)),
    ((TIP_INDEX, TIP_MIDDLE), (2, 3)),
    ((TIP_MIDDLE, TIP_PINKY), (3, 4)),
    ((TIP_INDEX, TIP_PINKY), (2, 4)),
]


def default_key_vector_spec(chain: HandChain) -> KeyVectorSpec:
    """Ten pairs with scales sized so c_i * robot vector is human scale.

    c_i is the canonical flat-human pair length over the robot rest pair
    length, making a matched human pose reachable by the robot at zero
    energy defect in scale.
    """
    rest = robot_keypoints(chain, np.zeros(chain.dof))
    scales = []
    for (ha, hb), (ra, rb) in _DEFAULT_PAIRS:
        hum = np.linalg.norm(_CANONICAL_FLAT_HUMAN[hb] - _CANONICAL_FLAT_HUMAN[ha])
        rob = np.linalg.norm(rest[rb] - rest[ra])
        scales.append(hum / rob)
    return KeyVectorSpec(pairs=list(_DEFAULT_PAIRS), scales=np.array(scales))


def key_vector_spec_from_dict(d: dict) -> KeyVectorSpec:
    pairs = [((int(p[0][0]), int(p[0][1])), (int(p[1][0]), int(p[1][1]))) for p in d["pairs"]]
    return KeyVectorSpec(pairs=pairs, scales=np.asarray(d["scales"], dtype=float))


def human_key_vectors(human: HumanHandFrame, spec: KeyVectorSpec) -> np.ndarray:
    kp = human.keypoints
    if np.any(spec._human >= len(kp)) or np.any(spec._human < 0):
        raise IndexError("human keypoint index out of range")
    return kp[spec._human[:, 1]] - kp[spec._human[:, 0]]


def _robot_key_vectors_batch(kps_batch: np.ndarray, spec: KeyVectorSpec) -> np.ndarray:
    if np.any(spec._robot >= kps_batch.shape[1]) or np.any(spec._robot < 0):
        raise IndexError("robot keypoint index out of range")
    return kps_batch[:, spec._robot[:, 1]] - kps_batch[:, spec._robot[:, 0]]


def energy(human: HumanHandFrame, q, chain: HandChain, spec: KeyVectorSpec) -> float:
    """Sum of squared differences between human and scaled robot key vectors."""
    vh = human_key_vectors(human, spec)
    vr = _robot_key_vectors_batch(_keypoints_batch(chain, np.asarray(q, dtype=float)[None, :]), spec)[0]
    diff = vh - spec.scales[:, None] * vr
    return float(np.sum(diff * diff))


def _energy_batch(vh, qb, chain, spec) -> np.ndarray:
    vr = _robot_key_vectors_batch(_keypoints_batch(chain, qb), spec)
    diff = vh[None, :, :] - spec.scales[None, :, None] * vr
    return np.sum(diff * diff, axis=(1, 2))


@dataclass
class RetargetOptions:
    max_iters: int = 500
    grad_tol: float = 1e-6
    fd_step: float = 1e-5
    step0: float = 0.05
    min_step: float = 1e-12


@dataclass
class RetargetResult:
    q: np.ndarray
    energies: np.ndarray  # energy at q_init plus after every accepted step
    converged: bool
    iterations: int


def retarget_hand(
    human: HumanHandFrame,
    chain: HandChain,
    spec: KeyVectorSpec,
    q_init,
    opts: RetargetOptions | None = None,
) -> RetargetResult:
    """Projected gradient descent on the key-vector energy.

    Central finite-difference gradient, backtracking line search halving
    until decrease, every iterate clamped to joint limits.  The energy
    trace is monotone non-increasing and the best iterate is returned.
    """
    opts = opts or RetargetOptions()
    vh = human_key_vectors(human, spec)
    q = clamp(chain, np.asarray(q_init, dtype=float))
    e = _energy_batch(vh, q[None, :], chain, spec)[0]
    energies = [e]
    step = opts.step0
    n = chain.dof
    eye = np.eye(n)
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        probe = np.concatenate([q[None, :] + opts.fd_step * eye, q[None, :] - opts.fd_step * eye])
        vals = _energy_batch(vh, probe, chain, spec)
        grad = (vals[:n] - vals[n:]) / (2 * opts.fd_step)
        if np.max(np.abs(grad)) <= opts.grad_tol:
            converged = True
            break
        trial = step * 2  # let the line search grow back after cautious steps
        accepted = False
        while trial >= opts.min_step:
            q_new = clamp(chain, q - trial * grad)
            e_new = _energy_batch(vh, q_new[None, :], chain, spec)[0]
            if e_new < e:
                q, e = q_new, e_new
                step = trial
                energies.append(e)
                accepted = True
                break
            trial /= 2
        if not accepted:
            break  # no descent direction at numerical resolution: return best
    return RetargetResult(
        q=q, energies=np.asarray(energies), converged=converged, iterations=it
    )


class HandDistiller:
    """The hand optimizer distilled into one network for batch throughput.

    Input: flattened wrist-local keypoints (63).  Output: 16 joint values,
    clamped to the chain limits.
    """

    def __init__(self, mlp, chain: HandChain, train_mae: float):
        self.mlp = mlp
        self.lo, self.hi = chain.limits()
        self.train_mae = train_mae

    def __call__(self, human: HumanHandFrame) -> np.ndarray:
        q = self.mlp.forward(human.keypoints.reshape(-1))
        return np.clip(q, self.lo, self.hi)


def distill_hand(
    dataset,
    chain: HandChain,
    hidden: int = 128,
    epochs: int = 400,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> HandDistiller:
    """Regress optimizer outputs with a small network (squared loss, Adam)."""
    from .errors import EmptyDatasetError
    from .learn import AdamState, Mlp, TrainConfig

    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("distillation dataset is empty")
    x = np.stack([frame.keypoints.reshape(-1) for frame, _ in dataset])
    y = np.stack([np.asarray(q, dtype=float) for _, q in dataset])
    rng = np.random.default_rng([seed, 2])
    mlp = Mlp.init([x.shape[1], hidden, hidden // 2, y.shape[1]], rng)
    params = mlp.params()
    adam = AdamState(params)
    cfg = TrainConfig(learning_rate=learning_rate, batch_size=batch_size, seed=seed)
    n = len(dataset)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            grads = [np.zeros_like(p) for p in params]
            for i in idx:
                pred, cache = mlp.forward_cached(x[i])
                dpred = 2 * (pred - y[i]) / (len(idx) * y.shape[1])
                _, layer_grads = mlp.backward_cached(cache, dpred)
                flat = []
                for dw, db in layer_grads:
                    flat.extend([dw, db])
                for acc, g in zip(grads, flat):
                    acc += g
            adam.step(params, grads, cfg)
    preds = np.stack([mlp.forward(xi) for xi in x])
    mae = float(np.mean(np.abs(preds - y)))
    return HandDistiller(mlp, chain, train_mae=mae)


@dataclass
class Workspace:
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0):
            raise ValueError("half extents must be positive")

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Workspace":
        return Workspace(np.asarray(d["center"]), np.asarray(d["half_extents"]))


@dataclass
class ClipObservation:
    """Everything retargeting needs from one video clip."""

    hand_frames: list[HumanHandFrame]
    camera_traj: list[RigidTransform]  # camera-at-t in the first-camera frame
    gravity: AccelSample  # or a unit surface normal, same convention
    intrinsics: pnp.CameraIntrinsics
    label: str = ""
    wrist_poses: list[RigidTransform] | None = None  # ingested wrist-in-camera

    def __post_init__(self):
        if len(self.hand_frames) != len(self.camera_traj):
            raise LengthMismatchError(
                f"{len(self.hand_frames)} hand frames vs {len(self.camera_traj)} camera poses"
            )
        if self.wrist_poses is not None and len(self.wrist_poses) != len(self.hand_frames):
            raise LengthMismatchError("wrist_poses length must match hand_frames")
        ts = [f.timestamp for f in self.hand_frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")


def wrist_in_camera(clip: ClipObservation, ransac: pnp.RansacParams | None = None):
    """Per-frame wrist pose in the camera: PnP from 2D detections when
    present, otherwise the ingested poses."""
    out = []
    for i, frame in enumerate(clip.hand_frames):
        if frame.keypoints_2d is not None:
            corrs = [
                pnp.Correspondence(tuple(frame.keypoints[j]), tuple(frame.keypoints_2d[j]))
                for j in range(21)
            ]
            if ransac is not None:
                pose, _ = pnp.solve_pnp_ransac(corrs, clip.intrinsics, ransac)
            else:
                pose, _ = pnp.solve_pnp(corrs, clip.intrinsics)
            out.append(pose)
        elif clip.wrist_poses is not None:
            out.append(clip.wrist_poses[i])
        else:
            raise ValueError(f"frame {i} has neither 2D keypoints nor an ingested wrist pose")
    return out


def compose_wrist_chain(clip: ClipObservation, wrist_cam=None) -> list[RigidTransform]:
    """Robot-frame wrist poses before workspace rescaling.

    Chains the constant world-to-robot remap, the gravity alignment of the
    first camera, the per-frame camera motion, and the wrist-in-camera pose.
    """
    if wrist_cam is None:
        wrist_cam = wrist_in_camera(clip)
    if len(wrist_cam) != len(clip.camera_traj):
        raise LengthMismatchError("wrist poses and camera trajectory differ in length")
    prefix = compose(world_to_robot(), upright_from_accel(clip.gravity))
    return [
        compose(compose(prefix, cam_t), wc_t)
        for cam_t, wc_t in zip(clip.camera_traj, wrist_cam)
    ]


def rescale_to_workspace(positions, workspace: Workspace) -> np.ndarray:
    """Recenter the trajectory on the workspace center, then uniformly scale
    displacements just enough that every point fits the box."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) == 0:
        raise ValueError("positions must be a nonempty (n, 3) array")
    mid = 0.5 * (pos.max(axis=0) + pos.min(axis=0))
    disp = pos - mid
    ratio = np.max(np.abs(disp) / workspace.half_extents[None, :])
    if ratio > 1.0:
        disp = disp / ratio
    return workspace.center[None, :] + disp


def retarget_wrist(
    clip: ClipObservation,
    workspace: Workspace,
    ransac: pnp.RansacParams | None = None,
) -> list[RigidTransform]:
    """Full wrist retargeting: chain composition plus workspace rescaling."""
    chain_poses = compose_wrist_chain(clip, wrist_in_camera(clip, ransac))
    positions = rescale_to_workspace([p.translation for p in chain_poses], workspace)
    return [
        RigidTransform(p.rotation, pos, check=False)
        for p, pos in zip(chain_poses, positions)
    ]


def gripper_from_hand(human: HumanHandFrame, threshold: float = 0.06) -> bool:
    """True (close) when the mean thumb-to-fingertip distance is under the
    threshold; depends only on fingertip geometry."""
    kp = human.keypoints
    thumb = kp[TIP_THUMB]
    others = kp[[TIP_INDEX, TIP_MIDDLE, TIP_RING, TIP_PINKY]]
    return float(np.mean(np.linalg.norm(others - thumb, axis=1))) < threshold


def _ema(stack: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty_like(stack)
    out[0] = stack[0]
    for t in range(1, len(stack)):
        out[t] = alpha * stack[t] + (1 - alpha) * out[t - 1]
    return out


def lowpass(seq, alpha: float):
    """Exponential moving average, y0 = x0.

    Hand frames: smooths 3D (and any 2D) keypoints.  Pose sequences:
    smooths translations, averages rotation matrices entrywise and projects
    back onto rotations.  Arrays: smooths rows.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if len(seq) == 0:
        raise ValueError("sequence is empty")
    first = seq[0]
    if isinstance(first, HumanHandFrame):
        kp = _ema(np.stack([f.keypoints for f in seq]), alpha)
        kp2 = None
        if all(f.keypoints_2d is not None for f in seq):
            kp2 = _ema(np.stack([f.keypoints_2d for f in seq]), alpha)
        return [
            HumanHandFrame(
                keypoints=kp[i],
                timestamp=f.timestamp,
                keypoints_2d=None if kp2 is None else kp2[i],
                theta=f.theta,
                beta=f.beta,
            )
            for i, f in enumerate(seq)
        ]
    if isinstance(first, RigidTransform):
        trans = _ema(np.stack([p.translation for p in seq]), alpha)
        rots = _ema(np.stack([p.rotation for p in seq]), alpha)
        return [
            RigidTransform(orthonormalize(rots[i]), trans[i], check=False)
            for i in range(len(seq))
        ]
    return _ema(np.asarray(seq, dtype=float), alpha)


def augment(traj, seed):
    """Scale the workspace use by up to 10% and rotate the world frame by up
    to 10 degrees per fixed axis; hand channels untouched.

    seed may be an integer or any generator exposing uniform(lo, hi[, size]).
    Draw order: scale, then the three rotation angles.
    """
    from .trajectory import Trajectory

    rng = np.random.default_rng(seed) if isinstance(seed, (int, np.integer)) else seed
    scale = rng.uniform(0.9, 1.1)
    limit = math.radians(10.0)
    angles = np.asarray(rng.uniform(-limit, limit, 3), dtype=float)
    rot = rpy_to_matrix(*angles)
    centroid = traj.wrist_pos.mean(axis=0)
    new_pos = centroid[None, :] + scale * (traj.wrist_pos - centroid) @ rot.T
    new_rpy = np.empty_like(traj.wrist_rpy)
    from .geometry import matrix_to_rpy

    for i in range(len(traj.times)):
        new_rpy[i] = matrix_to_rpy(rot @ rpy_to_matrix(*traj.wrist_rpy[i]))
    return Trajectory(
        times=traj.times.copy(),
        wrist_pos=new_pos,
        wrist_rpy=new_rpy,
        hand=traj.hand.copy(),
        embodiment=traj.embodiment,
    )
