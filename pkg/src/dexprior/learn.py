"""Feature-conditioned policy with movement-primitive heads, plus training.

The policy maps (image features, initial hand pose, initial wrist pose) to a
full open-loop trajectory: a shared trunk feeds separate heads for the wrist
and hand streams, each head emitting forcing weights and a goal that are
rolled out through the attractor dynamics.  Gradients flow through the
rollout via its exact vector-Jacobian product, so everything trains with
plain reverse-mode chain rule, no autodiff framework.

Two ablation wirings are kept behind the same interface: "single-stream"
(one head drives a joint 22-channel rollout) and "open-head" (heads emit
the trajectory directly, no dynamics).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ndp
from .errors import DimensionMismatchError, EmptyDatasetError, LengthMismatchError
from .trajectory import DemoRecord, resample_rbf

CHECKPOINT_SCHEMA = "dexprior.checkpoint.v1"


class Mlp:
    """Fully connected net, rectifier hidden layers, linear output."""

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise DimensionMismatchError("bias length must match layer output")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise DimensionMismatchError("consecutive layer shapes incompatible")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @staticmethod
    def init(sizes, rng, out_scale: float = 1.0) -> "Mlp":
        """Glorot-uniform init; out_scale shrinks the final layer."""
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            if i == len(sizes) - 2:
                w = w * out_scale
            weights.append(w)
            biases.append(np.zeros(n_out))
        return Mlp(weights, biases)

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Returns (output, cache) where cache holds the layer inputs."""
        h = np.asarray(x, dtype=float)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = w @ h + b
            if i != last:
                h = np.maximum(h, 0.0)
        return h, cache

    def backward_cached(self, cache, dout: np.ndarray):
        """Gradients for one sample: returns (dx, [(dW, db) per layer])."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        d = np.asarray(dout, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            if i != len(self.weights) - 1:
                # the cached input of layer i+1 is relu(pre-activation of i)
                mask = cache[i + 1] > 0
                d = d * mask
            grads[i] = (np.outer(d, h_in), d.copy())
            d = self.weights[i].T @ d
        return d, grads

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class PolicyConfig:
    feature_dim: int = 512
    hand_dim: int = 16
    wrist_dim: int = 6
    hidden: int = 512
    mode: str = "two-stream"  # | "single-stream" | "open-head"
    dmp: ndp.DmpConfig = field(default_factory=ndp.DmpConfig)
    head_init_scale: float = 0.01  # early rollouts stay near the unforced attractor

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "hand_dim": self.hand_dim,
            "wrist_dim": self.wrist_dim,
            "hidden": self.hidden,
            "mode": self.mode,
            "dmp": self.dmp.to_dict(),
            "head_init_scale": self.head_init_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        d = dict(d)
        d["dmp"] = ndp.DmpConfig.from_dict(d["dmp"])
        return PolicyConfig(**d)


def desk_scale_config(**kw) -> PolicyConfig:
    """Small configuration used by the test and acceptance suites."""
    kw.setdefault("hidden", 64)
    kw.setdefault("dmp", ndp.DmpConfig(n_basis=10, steps=50))
    return PolicyConfig(**kw)


class Policy:
    """Trunk + per-stream heads; cfg_wrist and cfg_hand share the DMP settings."""

    def __init__(self, cfg: PolicyConfig, trunk: Mlp, heads: dict[str, Mlp]):
        self.cfg = cfg
        self.trunk = trunk
        self.heads = heads
        self.cfg_wrist = cfg.dmp
        self.cfg_hand = cfg.dmp
        self._check_shapes()

    def _head_out_dim(self, d: int) -> int:
        if self.cfg.mode == "open-head":
            return self.cfg.dmp.steps * d
        return self.cfg.dmp.n_basis * d + d

    def _check_shapes(self):
        c = self.cfg
        in_dim = c.feature_dim + c.hand_dim + c.wrist_dim
        if self.trunk.sizes[0] != in_dim:
            raise DimensionMismatchError(f"trunk input must be {in_dim}")
        if c.mode == "single-stream":
            expect = {"joint": self._head_out_dim(c.wrist_dim + c.hand_dim)}
        else:
            expect = {
                "wrist": self._head_out_dim(c.wrist_dim),
                "hand": self._head_out_dim(c.hand_dim),
            }
        if set(self.heads) != set(expect):
            raise DimensionMismatchError(f"heads must be {sorted(expect)}")
        for name, dim in expect.items():
            if self.heads[name].sizes[-1] != dim:
                raise DimensionMismatchError(f"head {name} must output {dim} values")
            if self.heads[name].sizes[0] != self.trunk.sizes[-1]:
                raise DimensionMismatchError(f"head {name} input must match trunk latent")

    @staticmethod
    def init(cfg: PolicyConfig, seed: int) -> "Policy":
        rng = np.random.default_rng([seed, 0])
        in_dim = cfg.feature_dim + cfg.hand_dim + cfg.wrist_dim
        trunk = Mlp.init([in_dim, cfg.hidden, cfg.hidden, cfg.hidden], rng)
        d_all = cfg.wrist_dim + cfg.hand_dim
        if cfg.mode == "single-stream":
            heads = {
                "joint": Mlp.init(
                    [cfg.hidden, cfg.dmp.n_basis * d_all + d_all], rng, cfg.head_init_scale
                )
            }
        elif cfg.mode == "open-head":
            heads = {
                "wrist": Mlp.init([cfg.hidden, cfg.dmp.steps * cfg.wrist_dim], rng, cfg.head_init_scale),
                "hand": Mlp.init([cfg.hidden, cfg.dmp.steps * cfg.hand_dim], rng, cfg.head_init_scale),
            }
        else:
            heads = {
                "wrist": Mlp.init(
                    [cfg.hidden, cfg.dmp.n_basis * cfg.wrist_dim + cfg.wrist_dim],
                    rng,
                    cfg.head_init_scale,
                ),
                "hand": Mlp.init(
                    [cfg.hidden, cfg.dmp.n_basis * cfg.hand_dim + cfg.hand_dim],
                    rng,
                    cfg.head_init_scale,
                ),
            }
        return Policy(cfg, trunk, heads)

    def parameters(self) -> list[np.ndarray]:
        out = self.trunk.params()
        for name in sorted(self.heads):
            out.extend(self.heads[name].params())
        return out


def _unpack_head(out: np.ndarray, n_basis: int, d: int):
    return out[: n_basis * d].reshape(n_basis, d), out[n_basis * d :]


def _forward_sample(policy: Policy, features, init_hand, init_wrist, with_cache=False):
    c = policy.cfg
    features = np.asarray(features, dtype=float)
    init_hand = np.asarray(init_hand, dtype=float)
    init_wrist = np.asarray(init_wrist, dtype=float)
    if features.shape != (c.feature_dim,):
        raise DimensionMismatchError(f"features must have shape ({c.feature_dim},)")
    if init_hand.shape != (c.hand_dim,) or init_wrist.shape != (c.wrist_dim,):
        raise DimensionMismatchError("init pose dimensions do not match the policy")
    x = np.concatenate([features, init_hand, init_wrist])
    latent, trunk_cache = policy.trunk.forward_cached(x)
    caches = {"trunk": trunk_cache, "latent": latent, "heads": {}, "outs": {}}
    cfg = c.dmp

    def run_stream(name, y0, d):
        out, hc = policy.heads[name].forward_cached(latent)
        caches["heads"][name] = hc
        caches["outs"][name] = out
        if c.mode == "open-head":
            return np.concatenate([y0[None, :], out.reshape(cfg.steps, d)], axis=0)
        w, g = _unpack_head(out, cfg.n_basis, d)
        return ndp.rollout(cfg, ndp.NdpParams(w, g), y0, np.zeros(d))

    if c.mode == "single-stream":
        y0 = np.concatenate([init_wrist, init_hand])
        traj = run_stream("joint", y0, c.wrist_dim + c.hand_dim)
        wrist, hand = traj[:, : c.wrist_dim], traj[:, c.wrist_dim :]
    else:
        wrist = run_stream("wrist", init_wrist, c.wrist_dim)
        hand = run_stream("hand", init_hand, c.hand_dim)
    if with_cache:
        caches["init"] = (init_wrist, init_hand)
        return wrist, hand, caches
    return wrist, hand


def forward(policy: Policy, features, init_hand, init_wrist):
    """Predicted (wrist, hand) trajectories, each (steps + 1, d)."""
    return _forward_sample(policy, features, init_hand, init_wrist)


def l1_loss(pred: tuple, target: tuple) -> float:
    """Mean absolute error per stream, streams weighted equally."""
    pw, ph = pred
    tw, th = target
    if pw.shape != tw.shape or ph.shape != th.shape:
        raise LengthMismatchError(
            f"prediction {pw.shape}/{ph.shape} vs target {tw.shape}/{th.shape}"
        )
    return 0.5 * float(np.mean(np.abs(pw - tw))) + 0.5 * float(np.mean(np.abs(ph - th)))


def _backward_sample(policy: Policy, caches, dwrist, dhand, grads, scale):
    """Accumulate parameter gradients for one sample into grads (scaled)."""
    c = policy.cfg
    cfg = c.dmp
    init_wrist, init_hand = caches["init"]

    def stream_grad(name, dtraj, y0, d):
        if c.mode == "open-head":
            dout = dtraj[1:].reshape(-1)
        else:
            w, g = _unpack_head(caches["outs"][name], cfg.n_basis, d)
            dw, dg, _ = ndp.rollout_vjp(cfg, ndp.NdpParams(w, g), y0, np.zeros(d), dtraj)
            dout = np.concatenate([dw.reshape(-1), dg])
        dlatent, head_grads = policy.heads[name].backward_cached(caches["heads"][name], dout)
        return dlatent, head_grads

    if c.mode == "single-stream":
        y0 = np.concatenate([init_wrist, init_hand])
        dtraj = np.concatenate([dwrist, dhand], axis=1)
        dlatent, head_grads = stream_grad("joint", dtraj, y0, c.wrist_dim + c.hand_dim)
        all_heads = {"joint": head_grads}
    else:
        dlat_w, hw = stream_grad("wrist", dwrist, init_wrist, c.wrist_dim)
        dlat_h, hh = stream_grad("hand", dhand, init_hand, c.hand_dim)
        dlatent = dlat_w + dlat_h
        all_heads = {"wrist": hw, "hand": hh}
    _, trunk_grads = policy.trunk.backward_cached(caches["trunk"], dlatent)

    flat = []
    for dw, db in trunk_grads:
        flat.extend([dw, db])
    for name in sorted(policy.heads):
        for dw, db in all_heads[name]:
            flat.extend([dw, db])
    for acc, g in zip(grads, flat):
        acc += scale * g


def _targets(policy: Policy, record: DemoRecord):
    """Target streams resampled to steps + 1 so loss aligns index to index."""
    n = policy.cfg.dmp.steps + 1
    traj = record.trajectory
    if len(traj) != n:
        traj = resample_rbf(traj, n)
    return traj.wrist6(), traj.hand


def _sample_tuple(policy: Policy, rec: DemoRecord):
    tw, th = _targets(policy, rec)
    return (rec.features, rec.init_hand, rec.init_wrist, tw, th)


def _backward_samples(policy: Policy, samples):
    grads = [np.zeros_like(p) for p in policy.parameters()]
    total = 0.0
    for features, init_hand, init_wrist, tw, th in samples:
        pw, ph, caches = _forward_sample(policy, features, init_hand, init_wrist, with_cache=True)
        total += l1_loss((pw, ph), (tw, th))
        # d(loss)/d(pred): L1 subgradient, 0 at exact zero residual
        dwrist = 0.5 * np.sign(pw - tw) / pw.size
        dhand = 0.5 * np.sign(ph - th) / ph.size
        _backward_sample(policy, caches, dwrist, dhand, grads, 1.0 / len(samples))
    return total / len(samples), grads


def backward(policy: Policy, batch: list[DemoRecord]):
    """Mean-batch loss and its exact gradient bundle (list aligned with
    policy.parameters())."""
    if not batch:
        raise EmptyDatasetError("batch is empty")
    return _backward_samples(policy, [_sample_tuple(policy, rec) for rec in batch])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    pretrain_epochs: int = 20
    finetune_epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning rate and batch size must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "pretrain_epochs": self.pretrain_epochs,
            "finetune_epochs": self.finetune_epochs,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


class AdamState:
    """First/second moment accumulators mirroring the parameter list."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @staticmethod
    def from_dict(d: dict, params: list[np.ndarray]) -> "AdamState":
        state = AdamState(params)
        state.t = int(d["t"])
        loaded_m = [np.asarray(a, dtype=float) for a in d["m"]]
        loaded_v = [np.asarray(a, dtype=float) for a in d["v"]]
        if len(loaded_m) != len(params) or any(
            a.shape != p.shape for a, p in zip(loaded_m, params)
        ):
            raise ValueError("optimizer state shapes do not mirror the parameters")
        state.m = loaded_m
        state.v = loaded_v
        return state

    def step(self, params, grads, cfg: TrainConfig):
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if cfg.clip_norm > 0 and norm > cfg.clip_norm:
            grads = [g * (cfg.clip_norm / norm) for g in grads]
        self.t += 1
        bc1 = 1 - cfg.beta1**self.t
        bc2 = 1 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def _run_phase(policy, records, epochs, cfg, adam, rng):
    losses = []
    params = policy.parameters()
    samples = [_sample_tuple(policy, rec) for rec in records]  # resample targets once
    n = len(samples)
    for _ in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in perm[start : start + cfg.batch_size]]
            loss, grads = _backward_samples(policy, batch)
            adam.step(params, grads, cfg)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / batches)
    return losses


@dataclass
class TrainResult:
    policy: Policy
    pretrain_losses: list[float]
    finetune_losses: list[float]
    adam: AdamState
    rng_state: dict


def train(policy: Policy, human_set, robot_set, cfg: TrainConfig) -> TrainResult:
    """Two-phase schedule: pretrain on retargeted human clips, then fine-tune
    on robot demonstrations.  Either set may be empty (the other phase still
    runs); with no human data this degrades to plain behavior cloning."""
    human_set = list(human_set)
    robot_set = list(robot_set)
    if not human_set and not robot_set:
        raise EmptyDatasetError("both training sets are empty")
    rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState(policy.parameters())
    pre = (
        _run_phase(policy, human_set, cfg.pretrain_epochs, cfg, adam, rng)
        if human_set
        else []
    )
    if robot_set:
        # fine-tuning starts from the pretrained weights, fresh optimizer state
        adam = AdamState(policy.parameters())
        fin = _run_phase(policy, robot_set, cfg.finetune_epochs, cfg, adam, rng)
    else:
        fin = []
    return TrainResult(
        policy=policy,
        pretrain_losses=pre,
        finetune_losses=fin,
        adam=adam,
        rng_state=rng.bit_generator.state,
    )


def evaluate(policy: Policy, records) -> dict:
    """Mean L1, per-stream L1, and terminal wrist-position error stats."""
    records = list(records)
    if not records:
        raise EmptyDatasetError("evaluation set is empty")
    wrist_l1, hand_l1, terminal = [], [], []
    for rec in records:
        tw, th = _targets(policy, rec)
        pw, ph = forward(policy, rec.features, rec.init_hand, rec.init_wrist)
        wrist_l1.append(float(np.mean(np.abs(pw - tw))))
        hand_l1.append(float(np.mean(np.abs(ph - th))))
        terminal.append(float(np.linalg.norm(pw[-1, :3] - tw[-1, :3])))
    terminal_arr = np.array(terminal)
    return {
        "n": len(records),
        "mean_l1": float(0.5 * np.mean(wrist_l1) + 0.5 * np.mean(hand_l1)),
        "wrist_l1": float(np.mean(wrist_l1)),
        "hand_l1": float(np.mean(hand_l1)),
        "terminal_pos": {
            "mean": float(terminal_arr.mean()),
            "p50": float(np.percentile(terminal_arr, 50)),
            "p95": float(np.percentile(terminal_arr, 95)),
            "values": terminal,
        },
    }


def save_checkpoint(
    path,
    policy: Policy,
    train_cfg: TrainConfig | None = None,
    extra=None,
    adam: AdamState | None = None,
    rng_state: dict | None = None,
):
    """Versioned JSON container; deterministic bytes for identical inputs.

    Holds the policy config, layer shapes and weights, and (when given) the
    optimizer moments and shuffle-RNG state so a run can be inspected or
    resumed."""
    blob = {
        "schema": CHECKPOINT_SCHEMA,
        "policy_config": policy.cfg.to_dict(),
        "trunk": _mlp_to_dict(policy.trunk),
        "heads": {name: _mlp_to_dict(m) for name, m in policy.heads.items()},
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "adam": adam.to_dict() if adam else None,
        "rng_state": rng_state,
        "extra": extra,
    }
    with open(path, "w") as f:
        json.dump(blob, f, sort_keys=True)


def load_checkpoint(path):
    """Returns (policy, train_config, adam_state, extra); every shape is
    validated against the declared layer sizes."""
    with open(path) as f:
        blob = json.load(f)
    if blob.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unknown checkpoint schema {blob.get('schema')!r}")
    cfg = PolicyConfig.from_dict(blob["policy_config"])
    policy = Policy(
        cfg,
        _mlp_from_dict(blob["trunk"]),
        {name: _mlp_from_dict(d) for name, d in blob["heads"].items()},
    )
    tc = TrainConfig.from_dict(blob["train_config"]) if blob.get("train_config") else None
    adam = (
        AdamState.from_dict(blob["adam"], policy.parameters()) if blob.get("adam") else None
    )
    return policy, tc, adam, blob.get("extra")


def _mlp_to_dict(m: Mlp) -> dict:
    return {
        "sizes": m.sizes,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }


def _mlp_from_dict(d: dict) -> Mlp:
    m = Mlp([np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]])
    if m.sizes != list(d["sizes"]):
        raise ValueError(f"checkpoint layer sizes {d['sizes']} do not match weights {m.sizes}")
    return m
