"""Forward kinematics for the 16-DOF four-finger robot hand.

The chain is a tree of revolute joints loaded from JSON.  Joint angles are
ordered by the canonical sort of joint names, recorded on the chain at
load.  Keypoints are the palm marker plus the four fingertip positions,
expressed in the palm (root) frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError
from .geometry import RigidTransform, transform_from_dict

AXIS_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    origin: RigidTransform
    axis: np.ndarray
    limits: tuple[float, float]


@dataclass
class HandChain:
    joints: list[JointSpec]
    fingertip_links: list[str]
    palm_keypoint: np.ndarray
    tip_offsets: dict[str, np.ndarray]
    root: str = "palm"
    # derived, filled in __post_init__
    joint_names: list[str] = field(default_factory=list)
    dof: int = 0

    def __post_init__(self):
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ValueError("duplicate joint names")
        known = {self.root}
        for j in self.joints:  # joints must arrive parents-first
            if j.parent not in known:
                raise ValueError(f"joint {j.name} has unknown parent {j.parent}")
            known.add(j.name)
        children = {j.parent for j in self.joints}
        for tip in self.fingertip_links:
            if tip not in known:
                raise ValueError(f"fingertip link {tip} does not exist")
            if tip in children:
                raise ValueError(f"fingertip link {tip} is not a leaf")
        for j in self.joints:
            if abs(np.linalg.norm(j.axis) - 1.0) > AXIS_UNIT_TOL:
                raise ValueError(f"joint {j.name} axis is not unit length")
            if j.limits[0] > j.limits[1]:
                raise ValueError(f"joint {j.name} has lo > hi")
        self.joint_names = sorted(names)
        self.dof = len(self.joints)
        self.palm_keypoint = np.asarray(self.palm_keypoint, dtype=float)
        self._index = {n: i for i, n in enumerate(names)}
        self._qslot = np.array([self.joint_names.index(n) for n in names])
        self._parent = np.array(
            [-1 if j.parent == self.root else self._index[j.parent] for j in self.joints]
        )
        self._origin_r = np.stack([j.origin.rotation for j in self.joints])
        self._origin_t = np.stack([j.origin.translation for j in self.joints])
        self._axis = np.stack([j.axis for j in self.joints])
        self._lo = np.array([j.limits[0] for j in self.joints])[np.argsort(self._qslot)]
        self._hi = np.array([j.limits[1] for j in self.joints])[np.argsort(self._qslot)]

    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays in canonical joint order."""
        return self._lo.copy(), self._hi.copy()

    def mid_pose(self) -> np.ndarray:
        return 0.5 * (self._lo + self._hi)


def _check_q(chain: HandChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise DimensionMismatchError(f"expected {chain.dof} joint values, got shape {q.shape}")
    return q


def clamp(chain: HandChain, q) -> np.ndarray:
    """Componentwise clamp into joint limits; idempotent."""
    q = _check_q(chain, q)
    return np.clip(q, chain._lo, chain._hi)


def _axis_rotation(axis, angle):
    """Rodrigues rotation about a unit axis; angle may be an array (batched)."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    ux, uy, uz = axis
    k = np.array([[0, -uz, uy], [uz, 0, -ux], [-uy, ux, 0.0]])
    outer = np.outer(axis, axis)
    return c * np.eye(3) + s * k + (1 - c) * outer


def forward_kinematics(chain: HandChain, q) -> dict[str, RigidTransform]:
    """Pose of every link in the palm frame; root pose is identity."""
    q = _check_q(chain, q)
    rots, trans = _fk_arrays(chain, q[None, :])
    out = {chain.root: RigidTransform.identity()}
    for i, joint in enumerate(chain.joints):
        out[joint.name] = RigidTransform(rots[0, i], trans[0, i], check=False)
    return out


def _fk_arrays(chain: HandChain, qb: np.ndarray):
    """Batched link poses: qb (B, dof) -> rotations (B, J, 3, 3), positions (B, J, 3)."""
    b = qb.shape[0]
    j = chain.dof
    rots = np.empty((b, j, 3, 3))
    trans = np.empty((b, j, 3))
    for i in range(j):
        local = chain._origin_r[i] @ _axis_rotation(chain._axis[i], qb[:, chain._qslot[i]])
        p = chain._parent[i]
        if p < 0:
            rots[:, i] = local
            trans[:, i] = chain._origin_t[i]
        else:
            rots[:, i] = rots[:, p] @ local
            trans[:, i] = np.einsum("bij,j->bi", rots[:, p], chain._origin_t[i]) + trans[:, p]
    return rots, trans


def robot_keypoints(chain: HandChain, q) -> np.ndarray:
    """Palm keypoint plus the four fingertips, (5, 3), palm frame."""
    q = _check_q(chain, q)
    return _keypoints_batch(chain, q[None, :])[0]


def _keypoints_batch(chain: HandChain, qb: np.ndarray) -> np.ndarray:
    rots, trans = _fk_arrays(chain, qb)
    b = qb.shape[0]
    pts = np.empty((b, 1 + len(chain.fingertip_links), 3))
    pts[:, 0] = chain.palm_keypoint
    for n, tip in enumerate(chain.fingertip_links):
        i = chain._index[tip]
        offset = chain.tip_offsets.get(tip)
        if offset is None:
            pts[:, n + 1] = trans[:, i]
        else:
            pts[:, n + 1] = trans[:, i] + np.einsum("bij,j->bi", rots[:, i], offset)
    return pts


def chain_from_dict(data: dict) -> HandChain:
    joints = [
        JointSpec(
            name=j["name"],
            parent=j["parent"],
            origin=transform_from_dict(j["origin"]),
            axis=np.asarray(j["axis"], dtype=float),
            limits=(float(j["limits"][0]), float(j["limits"][1])),
        )
        for j in data["joints"]
    ]
    offsets = {
        k: np.asarray(v, dtype=float) for k, v in data.get("tip_offsets", {}).items()
    }
    return HandChain(
        joints=joints,
        fingertip_links=list(data["fingertips"]),
        palm_keypoint=np.asarray(data["palm_keypoint"], dtype=float),
        tip_offsets=offsets,
    )


def load_chain(path: str | Path, expect_dof: int | None = None) -> HandChain:
    """Load and validate a chain file; fails loudly on any violation."""
    with open(path) as f:
        chain = chain_from_dict(json.load(f))
    if expect_dof is not None and chain.dof != expect_dof:
        raise ValueError(f"chain has {chain.dof} joints, expected {expect_dof}")
    return chain


def default_chain() -> HandChain:
    """The 16-DOF four-finger chain shipped with the package."""
    text = resources.files("dexprior").joinpath("data/default_hand16.json").read_text()
    return chain_from_dict(json.loads(text))
