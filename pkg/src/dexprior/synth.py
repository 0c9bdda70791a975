"""Synthetic clips and demonstrations with embedded ground truth.

Every clip is forward-composed from known ingredients: a smooth wrist path,
a moving camera, a gravity tilt, and a coordinated hand closure.  2D
keypoints are exact projections of the 3D hand model through the embedded
pose, and the visual feature vector is a fixed deterministic function of
the task context, so the retargeting pipeline and the policy trainer can
both be checked against what was put in.
"""

from __future__ import annotations

import math

import numpy as np

from . import pnp
from .geometry import (
    AccelSample,
    RigidTransform,
    _rx,
    _ry,
    compose,
    invert,
    matrix_to_rpy,
    rpy_to_matrix,
    transform_to_dict,
    world_to_robot,
)
from .kinematics import HandChain, robot_keypoints
from .retarget import (
    TIP_INDEX,
    TIP_MIDDLE,
    TIP_PINKY,
    TIP_THUMB,
    ClipObservation,
    HumanHandFrame,
    Workspace,
    rescale_to_workspace,
)
from .trajectory import DemoRecord, Trajectory, resample_rbf

FEATURE_DIM = 512
CONTEXT_DIM = 6
_FEATURE_SEED = 20240001  # fixes the hidden context -> feature embedding
SYNTH_HAND_SCALE = 1.1  # human keypoints are this multiple of the robot vectors


def _feature_embedding():
    rng = np.random.default_rng(_FEATURE_SEED)
    w = rng.normal(size=(FEATURE_DIM, CONTEXT_DIM)) / math.sqrt(CONTEXT_DIM)
    b = rng.normal(size=FEATURE_DIM) * 0.1
    return w, b


_FEAT_W, _FEAT_B = _feature_embedding()


def features_from_context(context: np.ndarray) -> np.ndarray:
    """Deterministic stand-in for a frozen visual encoder."""
    return np.tanh(_FEAT_W @ np.asarray(context, dtype=float) + _FEAT_B)


def sample_context(rng) -> np.ndarray:
    """Task context: displacement (3), arc height, closure time, grip amount."""
    delta = rng.uniform(-0.12, 0.12, 3)
    arc = rng.uniform(0.0, 0.08)
    close_frac = rng.uniform(0.35, 0.65)
    grip = rng.uniform(0.55, 0.95)
    return np.concatenate([delta, [arc, close_frac, grip]])


def _minimum_jerk(u: np.ndarray) -> np.ndarray:
    return 10 * u**3 - 15 * u**4 + 6 * u**5


def _closure_profile(u: np.ndarray, close_frac: float) -> np.ndarray:
    s = np.clip((u - (close_frac - 0.2)) / 0.4, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def curl_pose(chain: HandChain, fractions) -> np.ndarray:
    """Joint vector for per-finger curl fractions [thumb, index, middle, ring]."""
    lo, hi = chain.limits()
    names = chain.joint_names
    q = np.zeros(chain.dof)
    for f, s in zip(("thumb", "index", "middle", "ring"), fractions):
        for j, frac in (("mcp", 1.0), ("pip", 1.05), ("dip", 0.9)):
            i = names.index(f + "_" + j)
            q[i] = lo[i] + float(s) * frac * (hi[i] - lo[i]) * 0.9
    return np.clip(q, lo, hi)


def human_from_robot_pose(chain: HandChain, q, scale: float = SYNTH_HAND_SCALE) -> np.ndarray:
    """21 wrist-local keypoints whose key vectors equal scale * robot vectors.

    Fingertips sit at scale * (robot tip - palm); in-between joints go along
    each segment with a small out-of-plane bow so the cloud is never
    coplanar (PnP needs depth variation)."""
    kpr = robot_keypoints(chain, q)
    tips = scale * (kpr[1:] - kpr[0])
    kp = np.zeros((21, 3))
    for tip_idx, robot_i in zip((TIP_THUMB, TIP_INDEX, TIP_MIDDLE, TIP_PINKY), range(4)):
        kp[tip_idx] = tips[robot_i]
        for frac, j in zip((0.25, 0.5, 0.75), range(tip_idx - 3, tip_idx)):
            kp[j] = frac * tips[robot_i]
            kp[j, 2] += 0.008 * math.sin(math.pi * frac)  # knuckle bow
    kp[13:17] = 0.5 * (kp[9:13] + kp[17:21])
    kp[13:17, 2] -= 0.006
    return kp


def synth_clip(
    chain: HandChain,
    seed: int,
    n_frames: int = 30,
    fps: float = 10.0,
    label: str = "synthetic-pick",
    with_2d: bool = True,
):
    """One forward-composed clip; returns (clip, ground_truth dict).

    ground_truth carries the robot-frame pre-rescale wrist poses, the hand
    joint schedule, the context vector, and the feature vector.
    """
    rng = np.random.default_rng([seed, 11])
    context = sample_context(rng)
    delta, arc, close_frac, grip = context[:3], context[3], context[4], context[5]

    phi, rho = rng.uniform(-0.35, 0.35, 2)  # gravity tilt of the first camera
    up_rot = _ry(-phi) @ _rx(rho)
    gravity = AccelSample(*(up_rot.T @ np.array([0.0, 0.0, 9.81])))
    up = RigidTransform(up_rot, np.zeros(3))

    times = np.arange(n_frames) / fps
    u = times / times[-1]
    p0 = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(0.8, 0.95)])
    s = _minimum_jerk(u)
    pos_c1 = p0[None, :] + s[:, None] * delta[None, :]
    pos_c1[:, 1] += arc * np.sin(math.pi * u)  # lift arc in the first-camera frame
    tilt0 = rng.uniform(-0.3, 0.3, 3)
    tilt1 = rng.uniform(-0.2, 0.2, 3)
    closure = _closure_profile(u, close_frac)

    cam_traj = []
    wrist_c1 = []
    wrist_cam = []
    frames = []
    hand_q = []
    for t in range(n_frames):
        rot_w = rpy_to_matrix(*(tilt0 + u[t] * tilt1))
        w_c1 = RigidTransform(rot_w, pos_c1[t])
        wrist_c1.append(w_c1)
        if t == 0:
            cam = RigidTransform.identity()
        else:
            ang = 0.06 * math.sin(2 * math.pi * u[t])
            cam = RigidTransform(
                _ry(ang) @ _rx(0.5 * ang), 0.04 * np.array([math.sin(3 * u[t]), u[t], -u[t]])
            )
        cam_traj.append(cam)
        w_cam = compose(invert(cam), w_c1)
        wrist_cam.append(w_cam)

        q = curl_pose(chain, 0.12 + closure[t] * (grip - 0.12) * np.ones(4))
        hand_q.append(q)
        kp3d = human_from_robot_pose(chain, q)
        kp2d = None
        if with_2d:
            kp2d = np.stack([pnp.project(p, w_cam, pnp.GOPRO) for p in kp3d])
        frames.append(
            HumanHandFrame(keypoints=kp3d, timestamp=float(times[t]), keypoints_2d=kp2d)
        )

    clip = ClipObservation(
        hand_frames=frames,
        camera_traj=cam_traj,
        gravity=gravity,
        intrinsics=pnp.GOPRO,
        label=label,
        wrist_poses=None if with_2d else wrist_cam,
    )
    prefix = world_to_robot()
    prerescale = [compose(prefix, compose(up, w)) for w in wrist_c1]
    ground_truth = {
        "context": context.tolist(),
        "features": features_from_context(context).tolist(),
        "gravity_tilt": [phi, rho],
        "wrist_robot_prerescale": [transform_to_dict(t) for t in prerescale],
        "hand_q": [q.tolist() for q in hand_q],
        "closure": closure.tolist(),
    }
    return clip, ground_truth


def gt_trajectory(
    ground_truth: dict,
    times,
    workspace: Workspace,
    embodiment: str = "hand16",
    resample_len: int | None = None,
    close_threshold: float = 0.5,
) -> Trajectory:
    """The trajectory the retargeting pipeline should produce for a clip."""
    from .geometry import transform_from_dict

    poses = [transform_from_dict(d) for d in ground_truth["wrist_robot_prerescale"]]
    positions = rescale_to_workspace([p.translation for p in poses], workspace)
    rpy = np.array([matrix_to_rpy(p.rotation) for p in poses])
    if embodiment == "gripper1":
        hand = (np.asarray(ground_truth["closure"]) >= close_threshold).astype(float)[:, None]
    else:
        hand = np.asarray(ground_truth["hand_q"], dtype=float)
    traj = Trajectory(
        times=np.asarray(times, dtype=float),
        wrist_pos=positions,
        wrist_rpy=rpy,
        hand=hand,
        embodiment=embodiment,
    )
    if resample_len is not None:
        traj = resample_rbf(traj, resample_len)
    return traj


def synth_demo(
    chain: HandChain,
    seed: int,
    workspace: Workspace,
    n_frames: int = 30,
    fps: float = 10.0,
    resample_len: int = 200,
    embodiment: str = "hand16",
    task: str = "synthetic-pick",
    source: str = "robot-demo",
    noise: float = 0.0,
) -> DemoRecord:
    """A ready DemoRecord from the hidden generator, bypassing retargeting.

    noise > 0 adds smooth perturbation to the wrist path (used to mimic the
    roughness of retargeted human video data)."""
    clip, gt = synth_clip(chain, seed, n_frames=n_frames, fps=fps, with_2d=False)
    times = [f.timestamp for f in clip.hand_frames]
    traj = gt_trajectory(gt, times, workspace, embodiment=embodiment, resample_len=resample_len)
    if noise > 0:
        rng = np.random.default_rng([seed, 13])
        u = np.linspace(0, 1, len(traj.times))
        for c in range(3):
            a, f, ph = rng.normal(), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * math.pi)
            traj.wrist_pos[:, c] += noise * a * np.sin(2 * math.pi * f * u + ph)
    return DemoRecord.from_trajectory(
        traj, np.asarray(gt["features"]), task=task, source=source
    )
