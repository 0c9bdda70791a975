"""Pipeline driver: synth, retarget, pretrain, finetune, eval, validate.

One JSON config file describes the workspace, hand chain, intrinsics, and
training settings.  Seeds are mandatory flags on every stochastic command.
Batch commands never abort on a bad clip; failures land in the report.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import files, learn, ndp, pnp, synth
from . import kinematics as kin
from . import retarget as rt
from . import trajectory as tj
from .geometry import matrix_to_rpy

CONFIG_SCHEMA = "dexprior.config.v1"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    workspace: rt.Workspace
    chain: kin.HandChain
    keyvec: rt.KeyVectorSpec
    intrinsics: pnp.CameraIntrinsics
    embodiment: str
    lowpass_alpha: float
    resample_len: int
    gripper_threshold: float
    dmp: ndp.DmpConfig
    policy_hidden: int
    policy_mode: str
    train: learn.TrainConfig
    retarget_max_iters: int
    retarget_warm_iters: int
    ransac: pnp.RansacParams | None
    path: Path

    @property
    def hand_dim(self) -> int:
        return 1 if self.embodiment == "gripper1" else 16


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"config schema must be {CONFIG_SCHEMA!r}, got {raw.get('schema')!r}")
    try:
        embodiment = raw.get("embodiment", "hand16")
        if embodiment not in ("hand16", "gripper1"):
            raise ConfigError(f"unknown embodiment {embodiment!r}")
        chain_file = raw.get("chain_file")
        if chain_file is not None:
            chain_path = (path.parent / chain_file).resolve()
            if not chain_path.exists():
                raise ConfigError(f"chain file does not exist: {chain_path}")
            chain = kin.load_chain(chain_path)
        else:
            chain = kin.default_chain()
        keyvec_file = raw.get("keyvec_file")
        if keyvec_file is not None:
            keyvec_path = (path.parent / keyvec_file).resolve()
            if not keyvec_path.exists():
                raise ConfigError(f"key-vector file does not exist: {keyvec_path}")
            with open(keyvec_path) as f:
                keyvec = rt.key_vector_spec_from_dict(json.load(f))
        else:
            keyvec = rt.default_key_vector_spec(chain)
        ransac = None
        if raw.get("ransac") is not None:
            ransac = pnp.RansacParams(**raw["ransac"])
        return PipelineConfig(
            workspace=rt.Workspace.from_dict(raw["workspace"]),
            chain=chain,
            keyvec=keyvec,
            intrinsics=files.intrinsics_from_config(raw.get("intrinsics", "gopro")),
            embodiment=embodiment,
            lowpass_alpha=float(raw.get("lowpass_alpha", 1.0)),
            resample_len=int(raw.get("resample_len", 200)),
            gripper_threshold=float(raw.get("gripper_threshold", 0.06)),
            dmp=ndp.DmpConfig.from_dict(raw["dmp"]) if "dmp" in raw else ndp.DmpConfig(),
            policy_hidden=int(raw.get("policy_hidden", 512)),
            policy_mode=raw.get("policy_mode", "two-stream"),
            train=(
                learn.TrainConfig.from_dict(raw["train"]) if "train" in raw else learn.TrainConfig()
            ),
            retarget_max_iters=int(raw.get("retarget_max_iters", 300)),
            retarget_warm_iters=int(raw.get("retarget_warm_iters", 60)),
            ransac=ransac,
            path=path,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


def _policy_config(cfg: PipelineConfig) -> learn.PolicyConfig:
    return learn.PolicyConfig(
        feature_dim=512,
        hand_dim=cfg.hand_dim,
        wrist_dim=6,
        hidden=cfg.policy_hidden,
        mode=cfg.policy_mode,
        dmp=cfg.dmp,
    )


def process_clip(cfg: PipelineConfig, clip_path: str) -> dict:
    """Retarget one clip to a demo record dict; raises on unusable clips."""
    clip, meta = files.read_clip(clip_path)
    frames = clip.hand_frames
    if cfg.lowpass_alpha < 1.0:
        frames = rt.lowpass(frames, cfg.lowpass_alpha)
        wrist_poses = (
            rt.lowpass(clip.wrist_poses, cfg.lowpass_alpha)
            if clip.wrist_poses is not None
            else None
        )
        clip = rt.ClipObservation(
            hand_frames=frames,
            camera_traj=clip.camera_traj,
            gravity=clip.gravity,
            intrinsics=clip.intrinsics,
            label=clip.label,
            wrist_poses=wrist_poses,
        )
    poses = rt.retarget_wrist(clip, cfg.workspace, cfg.ransac)
    times = np.array([f.timestamp for f in frames])
    wrist_pos = np.stack([p.translation for p in poses])
    wrist_rpy = np.array([matrix_to_rpy(p.rotation) for p in poses])

    if cfg.embodiment == "gripper1":
        hand = np.array(
            [[float(rt.gripper_from_hand(f, cfg.gripper_threshold))] for f in frames]
        )
    else:
        q_prev = cfg.chain.mid_pose()
        hand_rows = []
        for i, frame in enumerate(frames):
            iters = cfg.retarget_max_iters if i == 0 else cfg.retarget_warm_iters
            result = rt.retarget_hand(
                frame,
                cfg.chain,
                cfg.keyvec,
                q_prev,
                rt.RetargetOptions(max_iters=iters),
            )
            q_prev = result.q
            hand_rows.append(result.q)
        hand = np.stack(hand_rows)

    traj = tj.Trajectory(
        times=times, wrist_pos=wrist_pos, wrist_rpy=wrist_rpy, hand=hand,
        embodiment=cfg.embodiment,
    )
    problems = tj.validate(traj)
    if problems:
        raise ValueError("invalid retargeted trajectory: " + "; ".join(problems))
    traj = tj.resample_rbf(traj, cfg.resample_len)
    if "features" not in meta:
        raise ValueError("clip meta lacks the ingested feature vector")
    demo = tj.DemoRecord.from_trajectory(
        traj,
        np.asarray(meta["features"], dtype=float),
        task=clip.label,
        source="human-retargeted",
    )
    return {"demo": tj.demo_to_dict(demo), "trajectory_lines": tj.trajectory_to_lines(traj)}


def _process_clip_path(args):
    config_path, clip_path = args
    cfg = load_config(config_path)
    try:
        return clip_path, process_clip(cfg, clip_path), None
    except Exception as e:  # per-clip isolation: report, never abort the batch
        return clip_path, None, f"{type(e).__name__}: {e}"


def cmd_retarget(cfg: PipelineConfig, clip_paths, out_dir: Path, jobs: int = 1) -> int:
    out_dir = Path(out_dir)
    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(_process_clip_path, [(str(cfg.path), str(p)) for p in clip_paths])
            )
    else:
        for p in clip_paths:
            try:
                results.append((str(p), process_clip(cfg, str(p)), None))
            except Exception as e:
                results.append((str(p), None, f"{type(e).__name__}: {e}"))
    demo_lines = []
    failed = []
    error_classes: dict[str, int] = {}
    manifest_records = []
    for clip_path, payload, err in results:
        if err is not None:
            failed.append({"clip": clip_path, "error": err})
            err_class = err.split(":", 1)[0]
            error_classes[err_class] = error_classes.get(err_class, 0) + 1
            continue
        stem = Path(clip_path).stem
        files.atomic_write_text(
            out_dir / "trajectories" / f"{stem}.jsonl",
            "\n".join(payload["trajectory_lines"]) + "\n",
        )
        demo_lines.append(json.dumps(payload["demo"]))
    if demo_lines:
        files.atomic_write_text(out_dir / "demos.jsonl", "\n".join(demo_lines) + "\n")
        manifest_records.append({"path": "demos.jsonl", "task": "", "split": "pretrain"})
        files.write_manifest(out_dir / "manifest.json", manifest_records)
    report = {
        "schema": files.REPORT_SCHEMA,
        "processed": len(results),
        "succeeded": len(results) - len(failed),
        "failed": failed,
        "failures_by_class": error_classes,
    }
    files.atomic_write_json(out_dir / "report.json", report)
    print(
        f"retargeted {report['succeeded']}/{report['processed']} clips"
        + (f", {len(failed)} failed" if failed else "")
    )
    return 0


def cmd_synth(
    cfg: PipelineConfig,
    out_dir: Path,
    seed: int,
    n_clips: int,
    n_human: int,
    n_robot: int,
    n_finetune: int,
) -> int:
    out_dir = Path(out_dir)
    # the key-vector scales the synthetic hands were built with, so retarget
    # configs can point keyvec_file here and reproduce the embedded poses
    files.atomic_write_json(
        out_dir / "keyvec.json",
        {
            "pairs": [[list(h), list(r)] for h, r in rt._DEFAULT_PAIRS],
            "scales": [synth.SYNTH_HAND_SCALE] * len(rt._DEFAULT_PAIRS),
        },
    )
    for i in range(n_clips):
        clip, gt = synth.synth_clip(cfg.chain, seed=seed * 100003 + i)
        files.write_clip(
            out_dir / "clips" / f"clip_{i:04d}",
            clip,
            features=gt["features"],
            ground_truth=gt,
        )
    demo_sets = {
        "human": (n_human, "human-retargeted", 0.004, 1),
        "robot": (n_robot, "robot-demo", 0.0, 2),
    }
    for name, (count, source, noise, salt) in demo_sets.items():
        if count == 0:
            continue
        records = [
            synth.synth_demo(
                cfg.chain,
                seed=seed * 100003 + salt * 1000003 + i,
                workspace=cfg.workspace,
                resample_len=cfg.resample_len,
                embodiment=cfg.embodiment,
                source=source,
                noise=noise,
            )
            for i in range(count)
        ]
        files.atomic_write_text(
            out_dir / "demos" / f"{name}.jsonl",
            "\n".join(json.dumps(tj.demo_to_dict(r)) for r in records) + "\n",
        )
        if name == "human":
            recs = [{"path": f"../demos/{name}.jsonl", "task": "synthetic-pick", "split": "pretrain"}]
        else:
            recs = [
                {
                    "path": f"../demos/{name}.jsonl#{i}",
                    "task": "synthetic-pick",
                    "split": "finetune" if i < n_finetune else "heldout",
                }
                for i in range(count)
            ]
        files.write_manifest(out_dir / "manifests" / f"{name}.json", recs)
    print(f"synthesized {n_clips} clips, {n_human} human demos, {n_robot} robot demos")
    return 0


def _load_manifest_records(manifest_path, split: str | None):
    """Manifest entries address either whole demo files or single lines via
    a #index suffix."""
    by_file: dict[str, list] = {}
    selected = []
    for rec in files.read_manifest(manifest_path):
        if split is not None and rec.get("split") != split:
            continue
        path, _, idx = rec["path"].partition("#")
        if path not in by_file:
            with open(path) as f:
                by_file[path] = [
                    tj.demo_from_dict(json.loads(line)) for line in f if line.strip()
                ]
        if idx:
            selected.append(by_file[path][int(idx)])
        else:
            selected.extend(by_file[path])
    return selected


def cmd_pretrain(cfg: PipelineConfig, manifest, out_path: Path, seed: int) -> int:
    records = _load_manifest_records(manifest, "pretrain")
    if not records:
        print("no pretrain records in manifest", file=sys.stderr)
        return 1
    policy = learn.Policy.init(_policy_config(cfg), seed=seed)
    tcfg = learn.TrainConfig(**{**cfg.train.to_dict(), "seed": seed})
    result = learn.train(policy, records, [], tcfg)
    learn.save_checkpoint(
        out_path,
        policy,
        tcfg,
        extra={"phase": "pretrain", "losses": result.pretrain_losses, "n": len(records)},
        adam=result.adam,
        rng_state=result.rng_state,
    )
    print(f"pretrained on {len(records)} records; final loss {result.pretrain_losses[-1]:.6f}")
    return 0


def cmd_finetune(
    cfg: PipelineConfig, manifest, out_path: Path, seed: int, init_path=None
) -> int:
    records = _load_manifest_records(manifest, "finetune")
    if not records:
        print("no finetune records in manifest", file=sys.stderr)
        return 1
    if init_path is not None:
        policy, _, _, _ = learn.load_checkpoint(init_path)
        baseline = False
    else:
        policy = learn.Policy.init(_policy_config(cfg), seed=seed)
        baseline = True
        print("no pretrain checkpoint given: training the no-action-prior baseline")
    tcfg = learn.TrainConfig(**{**cfg.train.to_dict(), "seed": seed})
    result = learn.train(policy, [], records, tcfg)
    learn.save_checkpoint(
        out_path,
        policy,
        tcfg,
        extra={
            "phase": "finetune",
            "baseline_no_action_prior": baseline,
            "losses": result.finetune_losses,
            "n": len(records),
        },
        adam=result.adam,
        rng_state=result.rng_state,
    )
    print(f"fine-tuned on {len(records)} records; final loss {result.finetune_losses[-1]:.6f}")
    return 0


def cmd_eval(
    cfg: PipelineConfig,
    manifest,
    checkpoint,
    out_path: Path,
    split: str | None = "heldout",
    dump_csv=None,
) -> int:
    records = _load_manifest_records(manifest, split)
    if not records:
        print(f"no records with split {split!r} in manifest", file=sys.stderr)
        return 1
    policy, _, _, _ = learn.load_checkpoint(checkpoint)
    metrics = learn.evaluate(policy, records)
    per_task: dict[str, dict] = {}
    for task in sorted({r.task for r in records}):
        per_task[task] = learn.evaluate(policy, [r for r in records if r.task == task])
    payload = {"schema": files.METRICS_SCHEMA, "split": split, "per_task": per_task, **metrics}
    files.atomic_write_json(out_path, payload)
    if dump_csv is not None:
        with open(dump_csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["record", "step", "pred_x", "pred_y", "pred_z", "tgt_x", "tgt_y", "tgt_z"])
            for ri, rec in enumerate(records):
                pw, _ = learn.forward(policy, rec.features, rec.init_hand, rec.init_wrist)
                tw, _ = learn._targets(policy, rec)
                for t in range(pw.shape[0]):
                    writer.writerow(
                        [ri, t] + [f"{v:.6f}" for v in pw[t, :3]] + [f"{v:.6f}" for v in tw[t, :3]]
                    )
    print(f"evaluated {len(records)} records: mean L1 {metrics['mean_l1']:.6f}")
    return 0


def cmd_validate(cfg: PipelineConfig, clip_paths) -> int:
    bad = 0
    for p in clip_paths:
        try:
            clip, _ = files.read_clip(p)
            print(f"ok: {p} ({len(clip.hand_frames)} frames)")
        except Exception as e:
            bad += 1
            print(f"invalid: {p}: {type(e).__name__}: {e}")
    print(f"validated {len(clip_paths)} files, {bad} invalid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dexprior",
        description="Retarget hand videos to robot trajectories and train open-loop policies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed=False):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        if seed:
            p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("synth", help="generate synthetic clips and demos with ground truth")
    add_common(p, seed=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-clips", type=int, default=4)
    p.add_argument("--n-human", type=int, default=0)
    p.add_argument("--n-robot", type=int, default=0)
    p.add_argument("--n-finetune", type=int, default=5)

    p = sub.add_parser("retarget", help="convert clips to robot-frame demo records")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("clips", nargs="*", default=[], help="clip .jsonl paths")

    p = sub.add_parser("pretrain", help="train the action prior on retargeted clips")
    add_common(p, seed=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("finetune", help="fine-tune on robot demonstrations")
    add_common(p, seed=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--init", default=None, help="pretrain checkpoint (omit for the baseline)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--split", default="heldout")
    p.add_argument("--dump-csv", default=None)

    p = sub.add_parser("validate", help="validate config and clip files")
    add_common(p)
    p.add_argument("clips", nargs="*", default=[])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            return cmd_synth(
                cfg, Path(args.out), args.seed, args.n_clips, args.n_human, args.n_robot,
                args.n_finetune,
            )
        if args.command == "retarget":
            return cmd_retarget(cfg, args.clips, Path(args.out), jobs=args.jobs)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.manifest, Path(args.out), args.seed)
        if args.command == "finetune":
            return cmd_finetune(cfg, args.manifest, Path(args.out), args.seed, args.init)
        if args.command == "eval":
            return cmd_eval(
                cfg, args.manifest, args.checkpoint, Path(args.out),
                split=(args.split or None), dump_csv=args.dump_csv,
            )
        if args.command == "validate":
            return cmd_validate(cfg, args.clips)
    except Exception:
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
