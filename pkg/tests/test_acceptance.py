"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.  Every tolerance is pinned here, not configurable.
"""

import json
import math
import time

import numpy as np
import pytest

from dexprior import files, learn, ndp, pnp, synth
from dexprior import kinematics as kin
from dexprior import retarget as rt
from dexprior import trajectory as tj
from dexprior.cli import main
from dexprior.geometry import (
    AccelSample,
    RigidTransform,
    _rx,
    _ry,
    pitch_from_accel,
    quat_to_matrix,
    roll_from_accel,
    upright_from_accel,
)


def report(num, runtime, budget, desc):
    assert runtime < budget, f"criterion {num} runtime {runtime:.1f}s over budget {budget}s"
    print(f"\nACCEPTANCE {num:02d} PASS ({runtime:6.2f}s < {budget}s): {desc}")


@pytest.fixture(scope="module")
def chain():
    return kin.default_chain()


@pytest.fixture(scope="module")
def workspace():
    return rt.Workspace(center=[0.45, 0.0, 0.3], half_extents=[0.25, 0.25, 0.2])


def test_01_dmp_convergence():
    start = time.time()
    cfg = ndp.DmpConfig()  # alpha 15, beta 3.75, 200 steps
    assert cfg.alpha == 15.0 and cfg.beta == 3.75 and cfg.steps == 200
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = 3
        y0 = rng.uniform(-2, 2, d)
        g = rng.uniform(-2, 2, d)
        params = ndp.NdpParams(w=np.zeros((cfg.n_basis, d)), g=g)
        ys = ndp.rollout(cfg, params, y0, np.zeros(d))
        rel = np.linalg.norm(ys[-1] - g) / (np.linalg.norm(y0 - g) + 1e-12)
        assert rel <= 1e-3, f"seed {seed}: terminal error {rel:.2e}"
    report(1, time.time() - start, 1.0, "unforced rollout reaches the goal within 1e-3")


def test_02_rollout_affinity():
    start = time.time()
    cfg = ndp.DmpConfig(n_basis=10, steps=50)
    d = 4
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        y0 = rng.normal(size=d)
        wa, wb = rng.normal(size=(2, 10, d))
        ga, gb = rng.normal(size=(2, d))
        lam = rng.uniform()
        mixed = ndp.rollout(
            cfg, ndp.NdpParams(lam * wa + (1 - lam) * wb, lam * ga + (1 - lam) * gb),
            y0, np.zeros(d),
        )
        ra = ndp.rollout(cfg, ndp.NdpParams(wa, ga), y0, np.zeros(d))
        rb = ndp.rollout(cfg, ndp.NdpParams(wb, gb), y0, np.zeros(d))
        assert np.max(np.abs(mixed - (lam * ra + (1 - lam) * rb))) <= 1e-8
    report(2, time.time() - start, 1.0, "rollout is affine in (w, g): 3-point interpolation")


def _rel_err(a, b, floor):
    """Relative error with a floor: coordinates much smaller than the
    gradient's dynamic range are checked against the floor instead (central
    differences at step 1e-6 carry ~1e-6 absolute roundoff noise)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_03_gradient_exactness():
    start = time.time()
    # rollout VJP vs central differences, 20 seeds
    cfg = ndp.DmpConfig(n_basis=5, steps=10)
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        d = 2
        params = ndp.NdpParams(rng.normal(size=(5, d)), rng.normal(size=d))
        y0 = rng.normal(size=d)
        upstream = rng.normal(size=(11, d))
        dw, dg, dy0 = ndp.rollout_vjp(cfg, params, y0, np.zeros(d), upstream)
        step = 1e-6

        def val(w, g, y):
            return float(np.sum(upstream * ndp.rollout(cfg, ndp.NdpParams(w, g), y, np.zeros(d))))

        fd_w = np.zeros_like(dw)
        for i in range(5):
            for j in range(d):
                wp, wm = params.w.copy(), params.w.copy()
                wp[i, j] += step
                wm[i, j] -= step
                fd_w[i, j] = (val(wp, params.g, y0) - val(wm, params.g, y0)) / (2 * step)
        floor = max(1e-3, 0.05 * float(np.max(np.abs(fd_w))))
        assert np.max(_rel_err(dw, fd_w, floor)) <= 1e-4
        fd_g = np.zeros_like(dg)
        for j in range(d):
            gp, gm = params.g.copy(), params.g.copy()
            gp[j] += step
            gm[j] -= step
            fd_g[j] = (val(params.w, gp, y0) - val(params.w, gm, y0)) / (2 * step)
        floor = max(1e-3, 0.05 * float(np.max(np.abs(fd_g))))
        assert np.max(_rel_err(dg, fd_g, floor)) <= 1e-4

    # full-policy backward on the tiny configuration: hidden 8, N = 5, steps 10
    pcfg = learn.PolicyConfig(
        feature_dim=6, hand_dim=2, wrist_dim=2, hidden=8,
        dmp=ndp.DmpConfig(n_basis=5, steps=10),
    )
    policy = learn.Policy.init(pcfg, seed=3)
    rng = np.random.default_rng(299)
    samples = []
    for _ in range(2):
        feats = rng.normal(size=6)
        ih, iw = rng.normal(size=2) * 0.3, rng.normal(size=2) * 0.3
        pw, ph = learn.forward(policy, feats, ih, iw)
        off_w = np.where(rng.normal(size=pw.shape) > 0, 0.4, -0.4)
        off_h = np.where(rng.normal(size=ph.shape) > 0, 0.4, -0.4)
        samples.append((feats, ih, iw, pw + off_w, ph + off_h))
    _, grads = learn._backward_samples(policy, samples)

    def total_loss():
        out = 0.0
        for feats, ih, iw, tw, th in samples:
            out += learn.l1_loss(learn.forward(policy, feats, ih, iw), (tw, th))
        return out / len(samples)

    params = policy.parameters()
    rng_pick = np.random.default_rng(300)
    step = 1e-5
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for i in rng_pick.choice(flat.size, size=min(8, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + step
            up = total_loss()
            flat[i] = orig - step
            dn = total_loss()
            flat[i] = orig
            fd = (up - dn) / (2 * step)
            ad = grads[pi].reshape(-1)[i]
            assert abs(fd - ad) <= 1e-3 * max(1e-3, abs(fd), abs(ad))
    report(3, time.time() - start, 30.0, "rollout VJP and policy backward match finite differences")


def test_04_pnp_recovery():
    start = time.time()

    def rot_err_deg(r1, r2):
        return math.degrees(math.acos(np.clip((np.trace(r1.T @ r2) - 1) / 2, -1, 1)))

    def synthesize(rng, noise=0.0):
        q = np.array([1.0, 0, 0, 0]) * 2 + rng.normal(size=4) * 0.5
        q /= np.linalg.norm(q)
        pose = RigidTransform(
            quat_to_matrix(q),
            np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.4)]),
        )
        cloud = rng.uniform(-0.12, 0.12, size=(21, 3))
        corrs = []
        for p in cloud:
            uv = pnp.project(p, pose, pnp.GOPRO) + (rng.normal(0, noise, 2) if noise else 0)
            corrs.append(pnp.Correspondence(tuple(p), tuple(uv)))
        return pose, corrs

    # noiseless accuracy
    for seed in range(20):
        rng = np.random.default_rng(400 + seed)
        pose, corrs = synthesize(rng)
        got, _ = pnp.solve_pnp(corrs, pnp.GOPRO)
        assert rot_err_deg(got.rotation, pose.rotation) <= 0.5
        rel_t = np.linalg.norm(got.translation - pose.translation) / np.linalg.norm(pose.translation)
        assert rel_t <= 0.01

    # RANSAC with 30% outliers: 95th percentile over 100 seeds
    rot_errs = []
    for seed in range(100):
        rng = np.random.default_rng(500 + seed)
        pose, corrs = synthesize(rng)
        bad = rng.choice(21, size=6, replace=False)
        for i in bad:
            corrs[i] = pnp.Correspondence(
                corrs[i].model_point, (rng.uniform(0, 1920), rng.uniform(0, 1080))
            )
        got, mask = pnp.solve_pnp_ransac(
            corrs, pnp.GOPRO, pnp.RansacParams(seed=seed, iterations=200)
        )
        rot_errs.append(rot_err_deg(got.rotation, pose.rotation))
        assert not mask[bad].any(), f"seed {seed}: outliers leaked into the mask"
    assert np.percentile(rot_errs, 95) <= 1.0
    report(4, time.time() - start, 30.0, "PnP 0.5 deg noiseless; RANSAC 1 deg with 30% outliers")


def test_05_gravity_alignment():
    start = time.time()
    grid = np.radians(np.arange(-60, 61, 5))
    up = np.array([0.0, 0.0, 9.81])
    # single-axis round trips recover the named angles exactly
    for phi in grid:
        g = _ry(phi) @ up
        a = AccelSample(*g)
        assert abs(pitch_from_accel(a) - phi) <= 1e-6
        np.testing.assert_allclose(upright_from_accel(a).apply(g), up, atol=1e-6)
    for rho in grid:
        g = _rx(-rho) @ up
        a = AccelSample(*g)
        assert abs(roll_from_accel(a) - rho) <= 1e-6
        np.testing.assert_allclose(upright_from_accel(a).apply(g), up, atol=1e-6)
    # full 2-D grid: the upright transform re-aligns every tilted gravity
    for phi in grid:
        for rho in grid:
            g = _rx(-rho) @ _ry(phi) @ up
            t = upright_from_accel(AccelSample(*g))
            np.testing.assert_allclose(t.apply(g), up, atol=1e-6)
    report(5, time.time() - start, 1.0, "gravity angles and alignment over the +-60 deg grid")


def test_06_wrist_chain(workspace):
    start = time.time()
    from dexprior.geometry import transform_from_dict

    chain = kin.default_chain()
    for seed in (1, 2, 3):
        clip, gt = synth.synth_clip(chain, seed=seed, with_2d=False)
        got = rt.compose_wrist_chain(clip)
        expected = [transform_from_dict(d) for d in gt["wrist_robot_prerescale"]]
        for a, b in zip(got, expected):
            assert np.max(np.abs(a.matrix() - b.matrix())) <= 1e-6
        poses = rt.retarget_wrist(clip, workspace)
        pos = np.stack([p.translation for p in poses])
        assert np.all(np.abs(pos - workspace.center) <= workspace.half_extents + 1e-9)
    report(6, time.time() - start, 5.0, "wrist chain recovers synthesized poses within 1e-6")


def test_07_hand_retargeting(chain):
    start = time.time()
    spec = rt.KeyVectorSpec(
        pairs=list(rt._DEFAULT_PAIRS), scales=np.full(10, synth.SYNTH_HAND_SCALE)
    )
    opts = rt.RetargetOptions(max_iters=500)
    pairs = []
    rng = np.random.default_rng(700)
    for seed in range(50):
        fractions = rng.uniform(0.05, 0.95, 4)
        q_star = synth.curl_pose(chain, fractions)
        human = rt.HumanHandFrame(keypoints=synth.human_from_robot_pose(chain, q_star))
        result = rt.retarget_hand(human, chain, spec, chain.mid_pose(), opts)
        assert result.energies[-1] <= 1e-4, f"seed {seed}: E={result.energies[-1]:.2e}"
        assert np.all(np.diff(result.energies) < 0), f"seed {seed}: trace not monotone"
        pairs.append((human, result.q))
    # distill the optimizer into a network; held-out error on fresh poses
    held = []
    for seed in range(15):
        fractions = rng.uniform(0.05, 0.95, 4)
        human = rt.HumanHandFrame(
            keypoints=synth.human_from_robot_pose(chain, synth.curl_pose(chain, fractions))
        )
        result = rt.retarget_hand(human, chain, spec, chain.mid_pose(), opts)
        held.append((human, result.q))
    distiller = rt.distill_hand(pairs, chain, epochs=1200, seed=1)
    errs = [float(np.mean(np.abs(distiller(h) - q))) for h, q in held]
    assert float(np.mean(errs)) <= 0.05, f"held-out mean joint error {np.mean(errs):.4f}"
    report(7, time.time() - start, 120.0, "energy descent to 1e-4 on 50 seeds; distill 0.05 rad")


def test_08_rbf_resampling():
    start = time.time()
    times = np.linspace(0, 1, 50)
    hand = np.tile(np.sin(2 * np.pi * times)[:, None], (1, 16))
    traj = tj.Trajectory(times, np.zeros((50, 3)), np.zeros((50, 3)), hand)
    out = tj.resample_rbf(traj, 200)
    analytic = np.sin(2 * np.pi * out.times)
    assert np.max(np.abs(out.hand - analytic[:, None])) <= 1e-2
    assert np.max(np.abs(out.hand[0] - hand[0])) <= 1e-6
    assert np.max(np.abs(out.hand[-1] - hand[-1])) <= 1e-6
    again = tj.resample_rbf(out, 200)
    assert np.max(np.abs(again.hand - out.hand)) <= 1e-6
    report(8, time.time() - start, 5.0, "sine 50->200 within 1e-2, exact endpoints, idempotent")


def test_09_action_prior_sample_efficiency(chain, workspace):
    start = time.time()
    steps = 50
    human = [
        synth.synth_demo(chain, seed=10_000 + i, workspace=workspace, resample_len=steps + 1,
                         source="human-retargeted", noise=0.004)
        for i in range(500)
    ]
    robot5 = [
        synth.synth_demo(chain, seed=20_000 + i, workspace=workspace, resample_len=steps + 1)
        for i in range(5)
    ]
    heldout = [
        synth.synth_demo(chain, seed=30_000 + i, workspace=workspace, resample_len=steps + 1)
        for i in range(50)
    ]
    cfg = learn.PolicyConfig(hidden=64, dmp=ndp.DmpConfig(n_basis=10, steps=steps))
    init_wins = 0
    finetune_wins = 0
    for seed in range(5):
        pre = learn.Policy.init(cfg, seed=seed)
        learn.train(pre, human, [], learn.TrainConfig(pretrain_epochs=25, finetune_epochs=0, seed=seed))
        rand = learn.Policy.init(cfg, seed=seed + 1000)
        if learn.evaluate(pre, heldout)["mean_l1"] < learn.evaluate(rand, heldout)["mean_l1"]:
            init_wins += 1
        learn.train(pre, [], robot5, learn.TrainConfig(pretrain_epochs=0, finetune_epochs=60, seed=seed))
        scratch = learn.Policy.init(cfg, seed=seed)
        learn.train(scratch, [], robot5, learn.TrainConfig(pretrain_epochs=0, finetune_epochs=60, seed=seed))
        if learn.evaluate(pre, heldout)["mean_l1"] <= learn.evaluate(scratch, heldout)["mean_l1"]:
            finetune_wins += 1
    assert init_wins == 5, f"pretrained-untrained beat random init only {init_wins}/5"
    assert finetune_wins >= 4, f"pretrain+finetune beat scratch only {finetune_wins}/5"
    report(
        9, time.time() - start, 900.0,
        f"action prior: init wins {init_wins}/5, finetune wins {finetune_wins}/5",
    )


def _write_accept_config(tmp_path, name="config.json", **overrides):
    cfg = {
        "schema": "dexprior.config.v1",
        "workspace": {"center": [0.45, 0.0, 0.3], "half_extents": [0.25, 0.25, 0.2]},
        "resample_len": 40,
        "dmp": {
            "alpha": 15.0, "beta": 3.75, "ax": 1.0, "n_basis": 8,
            "steps": 30, "tau": 1.0, "settle": 1.5, "dt": None,
        },
        "policy_hidden": 32,
        "train": {
            "learning_rate": 1e-3, "batch_size": 8, "pretrain_epochs": 6,
            "finetune_epochs": 6, "seed": 0, "beta1": 0.9, "beta2": 0.999,
            "eps": 1e-8, "clip_norm": 10.0,
        },
        "retarget_max_iters": 300,
        "retarget_warm_iters": 60,
    }
    cfg.update(overrides)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_10_reproducibility(tmp_path):
    start = time.time()
    cfg_path = _write_accept_config(tmp_path)
    for tag in ("r1", "r2"):
        assert main([
            "synth", "--config", str(cfg_path), "--seed", "77",
            "--out", str(tmp_path / f"d_{tag}"),
            "--n-clips", "0", "--n-human", "10", "--n-robot", "6", "--n-finetune", "4",
        ]) == 0
        assert main([
            "pretrain", "--config", str(cfg_path), "--seed", "5",
            "--manifest", str(tmp_path / f"d_{tag}" / "manifests" / "human.json"),
            "--out", str(tmp_path / f"ck_{tag}.json"),
        ]) == 0
        assert main([
            "eval", "--config", str(cfg_path),
            "--manifest", str(tmp_path / f"d_{tag}" / "manifests" / "robot.json"),
            "--checkpoint", str(tmp_path / f"ck_{tag}.json"),
            "--out", str(tmp_path / f"m_{tag}.json"),
        ]) == 0
    assert (tmp_path / "ck_r1.json").read_bytes() == (tmp_path / "ck_r2.json").read_bytes()
    assert (tmp_path / "m_r1.json").read_bytes() == (tmp_path / "m_r2.json").read_bytes()
    report(10, time.time() - start, 300.0, "byte-identical checkpoints and metrics across runs")


def test_11_end_to_end_pipeline(tmp_path):
    start = time.time()
    cfg_path = _write_accept_config(tmp_path)
    data = tmp_path / "data"
    assert main([
        "synth", "--config", str(cfg_path), "--seed", "42", "--out", str(data),
        "--n-clips", "6", "--n-human", "0", "--n-robot", "8", "--n-finetune", "5",
    ]) == 0
    clips = sorted((data / "clips").glob("*.jsonl"))
    assert len(clips) == 6
    # retargeting config points at the key-vector scales synth recorded
    rt_cfg = _write_accept_config(tmp_path, name="rt.json", keyvec_file="data/keyvec.json")
    assert main(
        ["retarget", "--config", str(rt_cfg), "--out", str(tmp_path / "rt")]
        + [str(c) for c in clips]
    ) == 0
    report_data = json.loads((tmp_path / "rt" / "report.json").read_text())
    assert report_data["succeeded"] == 6, report_data
    assert main([
        "pretrain", "--config", str(cfg_path), "--seed", "1",
        "--manifest", str(tmp_path / "rt" / "manifest.json"),
        "--out", str(tmp_path / "pre.json"),
    ]) == 0
    assert main([
        "finetune", "--config", str(cfg_path), "--seed", "2",
        "--manifest", str(data / "manifests" / "robot.json"),
        "--init", str(tmp_path / "pre.json"),
        "--out", str(tmp_path / "fin.json"),
    ]) == 0
    assert main([
        "eval", "--config", str(cfg_path),
        "--manifest", str(data / "manifests" / "robot.json"),
        "--checkpoint", str(tmp_path / "fin.json"),
        "--out", str(tmp_path / "metrics.json"),
    ]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    import jsonschema

    jsonschema.validate(metrics, files.METRICS_JSON_SCHEMA)
    report(11, time.time() - start, 1200.0, "synth -> retarget -> pretrain -> finetune -> eval")
