"""Clip, manifest, and report file handling.

All writes are atomic (temp file + rename) so interrupted runs never leave
truncated datasets behind.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .geometry import AccelSample, transform_from_dict, transform_to_dict
from .pnp import PRESETS, CameraIntrinsics
from .retarget import ClipObservation, HumanHandFrame

MANIFEST_SCHEMA = "dexprior.manifest.v1"
CLIP_META_SCHEMA = "dexprior.clipmeta.v1"
REPORT_SCHEMA = "dexprior.report.v1"
METRICS_SCHEMA = "dexprior.metrics.v1"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True))


def intrinsics_from_config(value) -> CameraIntrinsics:
    if isinstance(value, str):
        if value not in PRESETS:
            raise ValueError(f"unknown intrinsics preset {value!r}")
        return PRESETS[value]
    return CameraIntrinsics.from_dict(value)


def write_clip(stem: Path, clip: ClipObservation, features=None, ground_truth=None) -> None:
    """Write <stem>.jsonl (one frame per line) and <stem>.meta.json."""
    stem = Path(stem)
    lines = []
    for f in clip.hand_frames:
        rec = {"t": f.timestamp, "kp3d": f.keypoints.tolist()}
        if f.keypoints_2d is not None:
            rec["kp2d"] = f.keypoints_2d.tolist()
        if f.theta is not None:
            rec["theta"] = np.asarray(f.theta).tolist()
        if f.beta is not None:
            rec["beta"] = np.asarray(f.beta).tolist()
        lines.append(json.dumps(rec))
    atomic_write_text(stem.with_suffix(".jsonl"), "\n".join(lines) + "\n")
    meta = {
        "schema": CLIP_META_SCHEMA,
        "label": clip.label,
        "gravity": [clip.gravity.x, clip.gravity.y, clip.gravity.z],
        "intrinsics": {
            "fx": clip.intrinsics.fx,
            "fy": clip.intrinsics.fy,
            "cx": clip.intrinsics.cx,
            "cy": clip.intrinsics.cy,
        },
        "camera_traj": [transform_to_dict(t) for t in clip.camera_traj],
    }
    if clip.wrist_poses is not None:
        meta["wrist_traj"] = [transform_to_dict(t) for t in clip.wrist_poses]
    if features is not None:
        meta["features"] = [float(v) for v in features]
    if ground_truth is not None:
        meta["ground_truth"] = ground_truth
    atomic_write_json(stem.with_name(stem.name + ".meta.json"), meta)


def read_clip(jsonl_path) -> tuple[ClipObservation, dict]:
    """Load a clip; returns (observation, meta dict)."""
    jsonl_path = Path(jsonl_path)
    meta_path = jsonl_path.with_name(jsonl_path.stem + ".meta.json")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("schema") != CLIP_META_SCHEMA:
        raise ValueError(f"unknown clip meta schema {meta.get('schema')!r}")
    frames = []
    with open(jsonl_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            frames.append(
                HumanHandFrame(
                    keypoints=np.asarray(rec["kp3d"], dtype=float),
                    timestamp=float(rec["t"]),
                    keypoints_2d=(
                        np.asarray(rec["kp2d"], dtype=float) if "kp2d" in rec else None
                    ),
                    theta=np.asarray(rec["theta"]) if "theta" in rec else None,
                    beta=np.asarray(rec["beta"]) if "beta" in rec else None,
                )
            )
    wrist = None
    if "wrist_traj" in meta:
        wrist = [transform_from_dict(d) for d in meta["wrist_traj"]]
    clip = ClipObservation(
        hand_frames=frames,
        camera_traj=[transform_from_dict(d) for d in meta["camera_traj"]],
        gravity=AccelSample(*meta["gravity"]),
        intrinsics=CameraIntrinsics.from_dict(meta["intrinsics"]),
        label=meta.get("label", ""),
        wrist_poses=wrist,
    )
    return clip, meta


def write_manifest(path, records: list[dict]) -> None:
    """records: [{"path": relative-to-manifest, "task": str, "split": str}]"""
    atomic_write_json(path, {"schema": MANIFEST_SCHEMA, "records": records})


def read_manifest(path) -> list[dict]:
    path = Path(path)
    with open(path) as f:
        data = json.load(f)
    if data.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unknown manifest schema {data.get('schema')!r}")
    out = []
    for rec in data["records"]:
        rec = dict(rec)
        rec["path"] = str((path.parent / rec["path"]).resolve())
        out.append(rec)
    return out


METRICS_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema", "n", "mean_l1", "wrist_l1", "hand_l1", "terminal_pos"],
    "properties": {
        "schema": {"const": METRICS_SCHEMA},
        "n": {"type": "integer", "minimum": 1},
        "mean_l1": {"type": "number"},
        "wrist_l1": {"type": "number"},
        "hand_l1": {"type": "number"},
        "terminal_pos": {
            "type": "object",
            "required": ["mean", "p50", "p95"],
            "properties": {
                "mean": {"type": "number"},
                "p50": {"type": "number"},
                "p95": {"type": "number"},
            },
        },
        "per_task": {"type": "object"},
    },
}
