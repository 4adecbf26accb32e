"""Dual-expert policy: a trajectory expert trained on human and robot data
plus an action expert trained on robot data, conditioned on the (noisy)
trajectory, jointly optimized with a flow-matching objective.

Information flow is controlled by a blockwise attention mask with token
groups ordered (observation, trajectory, action): trajectory tokens never
attend to action tokens, so human data can only influence robot behavior
through the trajectory expert and the shared observation encoder. During a
fraction of action-expert training passes the trajectory conditioning is
replaced by a learned null token so the expert also works unconditioned.

At inference both experts are integrated in parallel by one Euler sampler
over a single shared flow-time grid; the action expert sees the trajectory
sampler's current (noisy) state at the matching flow time, exactly as in
training.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import network as net
from .errors import DataFormatError, TrainingError, TruncatedFileError, VersionMismatchError
from .flow import TAU_EPSILON, euler_sample
from .optim import AdamW
from .trajectory import (CHUNK_LENGTH, ROBOT, NormStats, ProprioState, TrajectoryChunk,
                         denormalize, normalize)
from .util import fingerprint

HORIZON = CHUNK_LENGTH
ACTION_DIM = 7
TRAJ_DIM = 3
ROBOT_STATE_DIM = 8
TRAJ_STATE_DIM = 3

CHECKPOINT_MAGIC = b"TFLOWCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ObservationFeatures:
    """Fixed-length scene encoding standing in for visual observations.

    The layout is produced (and versioned) by the simulator's featurizer; the
    policy only checks length and finiteness against its config.
    """

    values: np.ndarray
    version: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation features must be finite")


@dataclass
class ActionChunk:
    """H future actions, each (dx, dy, dz, wx, wy, wz, gripper).

    The position delta is in meters, the rotation delta is an axis-angle in
    radians, and the gripper channel is a normalized intent scalar
    (closed-intent +1, open-intent -1). Padding flags mark replicated tail
    rows exactly like :class:`TrajectoryChunk`.
    """

    actions: np.ndarray
    padding: np.ndarray
    anchor: int = 0

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.padding = np.asarray(self.padding, dtype=bool)
        if self.actions.shape != (HORIZON, ACTION_DIM):
            raise ValueError(f"actions must be ({HORIZON}, {ACTION_DIM}), got {self.actions.shape}")
        if self.padding.shape != (HORIZON,):
            raise ValueError("padding flags must have one entry per step")


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture hyperparameters for both experts and the shared encoder."""

    obs_dim: int
    width: int = 64
    blocks: int = 2
    heads: int = 1
    mlp_hidden: int = 128
    horizon: int = HORIZON
    dtype: str = "float32"
    featurizer_version: str = "v1"

    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization hyperparameters (see the pinned-constants tests)."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-10
    warmup_steps: int = 1000
    decay_steps: int = 160_000
    min_learning_rate: float = 2.5e-6
    batch_size: int = 32
    horizon: int = HORIZON
    trajectory_mask_prob: float = 0.2

    def __post_init__(self):
        if not (0 < self.warmup_steps < self.decay_steps):
            raise ValueError("need 0 < warmup_steps < decay_steps")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


@dataclass(frozen=True)
class Normalizers:
    """Per-quantity normalization stats from the dataset manifest."""

    state: NormStats
    action: NormStats
    trajectory: NormStats


@dataclass
class TrainingSample:
    """One anchor drawn from a demonstration, unnormalized."""

    embodiment: str
    obs: np.ndarray                       # (obs_dim,)
    proprio: np.ndarray                   # (8,) robot / (3,) human
    traj_chunk: np.ndarray                # (H, 3)
    traj_padding: np.ndarray              # (H,)
    action_chunk: np.ndarray | None       # (H, 7), robot only
    action_padding: np.ndarray | None


@dataclass
class TrainingBatch:
    """Normalized batch arrays plus the fresh flow-matching draws.

    ``robot_index`` selects the robot elements; all action-expert arrays are
    already gathered down to that subset so human elements can contribute
    exactly zero action loss.
    """

    obs: np.ndarray                       # (B, obs_dim)
    qprime: np.ndarray                    # (B, 3) endpoint positions
    traj_target: np.ndarray               # (B, H, 3) normalized
    traj_weight: np.ndarray               # (B, H, 1) 1 - padding
    tau: np.ndarray                       # (B,)
    z_traj: np.ndarray                    # (B, H, 3)
    robot_index: np.ndarray               # (Br,) int
    q: np.ndarray                         # (Br, 8)
    action_target: np.ndarray             # (Br, H, 7) normalized
    action_weight: np.ndarray             # (Br, H, 1)
    z_action: np.ndarray                  # (Br, H, 7)
    traj_masked: np.ndarray               # (Br,) bool

    @property
    def size(self) -> int:
        return len(self.obs)


@dataclass(frozen=True)
class LossRecord:
    step: int
    loss_traj: float
    loss_action: float
    loss_total: float
    lr: float


# -- parameters --------------------------------------------------------------

def init_policy_params(config: PolicyConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype()
    w, h = config.width, config.horizon
    params: dict[str, np.ndarray] = {}

    net.init_linear(params, rng, "encoder.obs", config.obs_dim, w, dtype)
    params["encoder.obs_seg"] = rng.normal(0.0, 0.02, w).astype(dtype)

    net.init_linear(params, rng, "traj.prop", TRAJ_STATE_DIM, w, dtype)
    params["traj.prop_seg"] = rng.normal(0.0, 0.02, w).astype(dtype)
    net.init_linear(params, rng, "traj.in", TRAJ_DIM, w, dtype)
    params["traj.pos"] = rng.normal(0.0, 0.02, (h, w)).astype(dtype)
    for b in range(config.blocks):
        net.init_block(params, rng, f"traj.b{b}", w, config.mlp_hidden, dtype)
    params["traj.head_ln.g"] = np.ones(w, dtype=dtype)
    params["traj.head_ln.b"] = np.zeros(w, dtype=dtype)
    net.init_linear(params, rng, "traj.head", w, TRAJ_DIM, dtype, scale=0.02)

    net.init_linear(params, rng, "action.prop", ROBOT_STATE_DIM, w, dtype)
    params["action.prop_seg"] = rng.normal(0.0, 0.02, w).astype(dtype)
    net.init_linear(params, rng, "action.traj_in", TRAJ_DIM, w, dtype)
    params["action.null_traj"] = rng.normal(0.0, 0.02, w).astype(dtype)
    params["action.pos_traj"] = rng.normal(0.0, 0.02, (h, w)).astype(dtype)
    net.init_linear(params, rng, "action.in", ACTION_DIM, w, dtype)
    params["action.pos_act"] = rng.normal(0.0, 0.02, (h, w)).astype(dtype)
    for b in range(config.blocks):
        net.init_block(params, rng, f"action.b{b}", w, config.mlp_hidden, dtype)
    params["action.head_ln.g"] = np.ones(w, dtype=dtype)
    params["action.head_ln.b"] = np.zeros(w, dtype=dtype)
    net.init_linear(params, rng, "action.head", w, ACTION_DIM, dtype, scale=0.02)
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def _wrap(params: dict[str, np.ndarray]) -> dict[str, ad.Var]:
    return {k: ad.Var(v) for k, v in params.items()}


# -- forward passes -----------------------------------------------------------

def _embed_token(p: dict[str, ad.Var], name: str, seg: str, x: np.ndarray | ad.Var) -> ad.Var:
    tok = net.linear(p, name, ad.as_var(x)) + p[seg]
    b = tok.shape[0]
    return ad.reshape(tok, (b, 1, tok.shape[-1]))


def _traj_forward(p: dict[str, ad.Var], config: PolicyConfig, obs: np.ndarray,
                  qprime: np.ndarray, t_tau, tau: np.ndarray) -> ad.Var:
    """(B, H, 3) velocity estimate from the trajectory expert."""
    dtype = config.np_dtype()
    h = config.horizon
    obs_tok = _embed_token(p, "encoder.obs", "encoder.obs_seg", obs)
    prop_tok = _embed_token(p, "traj.prop", "traj.prop_seg", qprime)
    traj_tok = net.linear(p, "traj.in", ad.as_var(t_tau)) + p["traj.pos"]
    tokens = ad.concat([obs_tok, prop_tok, traj_tok], axis=1)
    tokens = tokens + net.tau_embedding(tau, config.width, dtype)
    bias = net.group_mask_bias([2, h], dtype)
    for b in range(config.blocks):
        tokens = net.block(p, f"traj.b{b}", tokens, bias, config.heads)
    out = ad.layer_norm(tokens[:, 2:]) * p["traj.head_ln.g"] + p["traj.head_ln.b"]
    return net.linear(p, "traj.head", out)


def _action_forward(p: dict[str, ad.Var], config: PolicyConfig, obs: np.ndarray,
                    q: np.ndarray, a_tau, t_tau, tau: np.ndarray,
                    traj_masked: np.ndarray, return_tokens: bool = False):
    """(Br, H, 7) velocity estimate from the action expert.

    ``traj_masked`` elements have their trajectory conditioning replaced by
    the learned null token (position and flow-time embeddings still apply).
    """
    dtype = config.np_dtype()
    h = config.horizon
    obs_tok = _embed_token(p, "encoder.obs", "encoder.obs_seg", obs)
    prop_tok = _embed_token(p, "action.prop", "action.prop_seg", q)
    traj_embed = net.linear(p, "action.traj_in", ad.as_var(t_tau))
    keep = (1.0 - np.asarray(traj_masked, dtype=dtype))[:, None, None]
    masked = np.asarray(traj_masked, dtype=dtype)[:, None, None]
    traj_tok = traj_embed * keep + p["action.null_traj"] * masked + p["action.pos_traj"]
    act_tok = net.linear(p, "action.in", ad.as_var(a_tau)) + p["action.pos_act"]
    tokens = ad.concat([obs_tok, prop_tok, traj_tok, act_tok], axis=1)
    tokens = tokens + net.tau_embedding(tau, config.width, dtype)
    bias = net.group_mask_bias([2, h, h], dtype)
    for b in range(config.blocks):
        tokens = net.block(p, f"action.b{b}", tokens, bias, config.heads)
    out = ad.layer_norm(tokens[:, 2 + h:]) * p["action.head_ln.g"] + p["action.head_ln.b"]
    head = net.linear(p, "action.head", out)
    if return_tokens:
        return head, tokens
    return head


def traj_expert_forward(params: dict[str, np.ndarray], config: PolicyConfig,
                        obs: np.ndarray, qprime: np.ndarray, t_tau: np.ndarray,
                        tau: float) -> np.ndarray:
    """Single-sample trajectory expert pass over normalized inputs."""
    _check_finite_inputs(obs, qprime, t_tau)
    dtype = config.np_dtype()
    with ad.no_grad():
        out = _traj_forward(_wrap(params), config,
                            np.asarray(obs, dtype=dtype)[None],
                            np.asarray(qprime, dtype=dtype)[None],
                            np.asarray(t_tau, dtype=dtype)[None],
                            np.array([tau]))
    return out.value[0].astype(np.float64)


def action_expert_forward(params: dict[str, np.ndarray], config: PolicyConfig,
                          obs: np.ndarray, q: np.ndarray, a_tau: np.ndarray,
                          t_tau: np.ndarray, tau: float,
                          traj_masked: bool = False) -> np.ndarray:
    """Single-sample action expert pass over normalized inputs."""
    _check_finite_inputs(obs, q, a_tau, t_tau)
    if np.asarray(a_tau).shape != (config.horizon, ACTION_DIM):
        raise ValueError(f"a_tau must be ({config.horizon}, {ACTION_DIM})")
    if np.asarray(t_tau).shape != (config.horizon, TRAJ_DIM):
        raise ValueError(f"t_tau must be ({config.horizon}, {TRAJ_DIM})")
    dtype = config.np_dtype()
    with ad.no_grad():
        out = _action_forward(_wrap(params), config,
                              np.asarray(obs, dtype=dtype)[None],
                              np.asarray(q, dtype=dtype)[None],
                              np.asarray(a_tau, dtype=dtype)[None],
                              np.asarray(t_tau, dtype=dtype)[None],
                              np.array([tau]), np.array([traj_masked]))
    return out.value[0].astype(np.float64)


def _check_finite_inputs(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=np.float64))):
            raise ValueError("non-finite network input")


# -- batches and losses --------------------------------------------------------

def is_robot_sample(sample: TrainingSample) -> bool:
    """The single place the policy reads the embodiment tag: action-loss masking."""
    return sample.embodiment == ROBOT


def make_batch(samples: list[TrainingSample], normalizers: Normalizers,
               rng: np.random.Generator, config: TrainingConfig,
               policy_config: PolicyConfig) -> TrainingBatch:
    """Assemble normalized arrays and draw fresh (z, tau, mask) randomness.

    The same tau draw parameterizes both experts for an element, matching the
    shared-grid inference convention.
    """
    dtype = policy_config.np_dtype()
    h = config.horizon
    robot_flags = np.array([is_robot_sample(s) for s in samples])
    obs = np.stack([s.obs for s in samples]).astype(dtype)
    qprime = np.stack([
        normalize(s.proprio[:3], normalizers.trajectory) for s in samples
    ]).astype(dtype)
    traj_target = np.stack([
        normalize(s.traj_chunk, normalizers.trajectory) for s in samples
    ]).astype(dtype)
    traj_weight = np.stack([(~s.traj_padding).astype(dtype)[:, None] for s in samples])
    tau = rng.uniform(0.0, 1.0 - TAU_EPSILON, size=len(samples))
    z_traj = rng.standard_normal((len(samples), h, TRAJ_DIM)).astype(dtype)

    robot_index = np.nonzero(robot_flags)[0]
    q = np.stack([
        normalize(samples[i].proprio, normalizers.state) for i in robot_index
    ]).astype(dtype) if len(robot_index) else np.zeros((0, ROBOT_STATE_DIM), dtype=dtype)
    action_target = np.stack([
        normalize(samples[i].action_chunk, normalizers.action) for i in robot_index
    ]).astype(dtype) if len(robot_index) else np.zeros((0, h, ACTION_DIM), dtype=dtype)
    action_weight = np.stack([
        (~samples[i].action_padding).astype(dtype)[:, None] for i in robot_index
    ]) if len(robot_index) else np.zeros((0, h, 1), dtype=dtype)
    z_action = rng.standard_normal((len(robot_index), h, ACTION_DIM)).astype(dtype)
    traj_masked = rng.random(len(robot_index)) < config.trajectory_mask_prob

    return TrainingBatch(obs=obs, qprime=qprime, traj_target=traj_target,
                         traj_weight=traj_weight, tau=tau, z_traj=z_traj,
                         robot_index=robot_index, q=q, action_target=action_target,
                         action_weight=action_weight, z_action=z_action,
                         traj_masked=traj_masked)


def _masked_mse(pred: ad.Var, target: np.ndarray, weight: np.ndarray) -> ad.Var:
    """Per-element mean over unpadded steps and dims, then mean over elements."""
    dims = target.shape[-1]
    err = pred - ad.as_var(target)
    per_elem = ad.sum_(err * err * weight, axis=(1, 2))
    counts = weight.sum(axis=(1, 2)) * dims
    return ad.mean(per_elem * (1.0 / counts))


def _joint_loss_var(p: dict[str, ad.Var], batch: TrainingBatch,
                    policy_config: PolicyConfig) -> tuple[ad.Var, ad.Var, ad.Var | None]:
    dtype = policy_config.np_dtype()
    tau = batch.tau
    t_tau = (tau[:, None, None] * batch.traj_target
             + (1.0 - tau[:, None, None]) * batch.z_traj).astype(dtype)
    v_traj = _traj_forward(p, policy_config, batch.obs, batch.qprime, t_tau, tau)
    traj_target_v = (batch.z_traj - batch.traj_target).astype(dtype)
    l_traj = _masked_mse(v_traj, traj_target_v, batch.traj_weight)

    l_action = None
    if len(batch.robot_index):
        tau_r = tau[batch.robot_index]
        a_tau = (tau_r[:, None, None] * batch.action_target
                 + (1.0 - tau_r[:, None, None]) * batch.z_action).astype(dtype)
        t_tau_r = t_tau[batch.robot_index]
        v_act = _action_forward(p, policy_config, batch.obs[batch.robot_index],
                                batch.q, a_tau, t_tau_r, tau_r, batch.traj_masked)
        act_target_v = (batch.z_action - batch.action_target).astype(dtype)
        l_action = _masked_mse(v_act, act_target_v, batch.action_weight)
        total = l_traj + l_action
    else:
        total = l_traj
    return total, l_traj, l_action


def joint_loss(params: dict[str, np.ndarray], batch: TrainingBatch,
               policy_config: PolicyConfig) -> tuple[float, float, float]:
    """(L_traj, L_action, L_total); human elements contribute zero action loss."""
    with ad.no_grad():
        total, l_traj, l_action = _joint_loss_var(_wrap(params), batch, policy_config)
    if l_action is None:
        logging.getLogger(__name__).warning("batch has no robot elements; action loss is 0")
        return float(l_traj.value), 0.0, float(total.value)
    return float(l_traj.value), float(l_action.value), float(total.value)


def lr_schedule(step: int, config: TrainingConfig = TrainingConfig()) -> float:
    """Linear warmup to the base rate, then linear decay to the floor."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step <= config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    if step >= config.decay_steps:
        return config.min_learning_rate
    frac = (step - config.warmup_steps) / (config.decay_steps - config.warmup_steps)
    return config.learning_rate + frac * (config.min_learning_rate - config.learning_rate)


def make_optimizer(params: dict[str, np.ndarray], config: TrainingConfig) -> AdamW:
    return AdamW(params, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                 weight_decay=config.weight_decay)


def train_step(params: dict[str, np.ndarray], optimizer: AdamW, batch: TrainingBatch,
               config: TrainingConfig, step: int,
               policy_config: PolicyConfig) -> LossRecord:
    """One AdamW update of all parameters against L_total at lr_schedule(step).

    Mutates ``params`` (and the optimizer moments) in place; deterministic
    given the batch contents.
    """
    leaves = _wrap(params)
    total, l_traj, l_action = _joint_loss_var(leaves, batch, policy_config)
    if not np.isfinite(total.value):
        raise TrainingError("non-finite loss", step=step,
                            snapshot={"loss_traj": float(l_traj.value)})
    total.backward()
    grads = {}
    bad = []
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.all(np.isfinite(g)):
            bad.append(name)
        grads[name] = g
    if bad:
        raise TrainingError("non-finite gradient", step=step,
                            snapshot={"parameters": bad, "loss_total": float(total.value)})
    optimizer.step(grads, lr_schedule(step, config))
    return LossRecord(step=step, loss_traj=float(l_traj.value),
                      loss_action=float(l_action.value) if l_action is not None else 0.0,
                      loss_total=float(total.value), lr=lr_schedule(step, config))


# -- inference -----------------------------------------------------------------

def infer(params: dict[str, np.ndarray], config: PolicyConfig, normalizers: Normalizers,
          obs: ObservationFeatures, q: ProprioState, n_steps: int = 10, seed: int = 0,
          condition_on: str = "noisy") -> tuple[TrajectoryChunk, ActionChunk]:
    """Generate a trajectory plan and an action chunk in parallel.

    Draws independent noise for both experts and integrates them with one
    Euler sampler over a shared flow-time grid. With ``condition_on="noisy"``
    (the training-time convention) the action expert sees the trajectory
    sampler's current state at each grid point; ``"final"`` first denoises the
    plan fully and conditions every action step on it.
    """
    if condition_on not in ("noisy", "final"):
        raise ValueError(f"unknown conditioning mode {condition_on!r}")
    if not q.is_robot:
        raise ValueError("inference needs the robot-variant proprioceptive state")
    dtype = config.np_dtype()
    h = config.horizon
    rng = np.random.default_rng(seed)
    z_t = rng.standard_normal((h, TRAJ_DIM))
    z_a = rng.standard_normal((h, ACTION_DIM))
    obs_n = np.asarray(obs.values, dtype=dtype)[None]
    qp_n = normalize(q.position, normalizers.trajectory).astype(dtype)[None]
    q_n = normalize(q.as_vector(), normalizers.state).astype(dtype)[None]
    p = _wrap(params)
    unmasked = np.array([False])

    def traj_field(x_t: np.ndarray, tau: float) -> np.ndarray:
        with ad.no_grad():
            v = _traj_forward(p, config, obs_n, qp_n,
                              x_t.reshape(1, h, TRAJ_DIM).astype(dtype), np.array([tau]))
        return v.value.reshape(-1).astype(np.float64)

    if condition_on == "final":
        plan_flat = euler_sample(traj_field, z_t.reshape(-1), n_steps)
        plan = plan_flat.reshape(h, TRAJ_DIM)

        def act_field(x_a: np.ndarray, tau: float) -> np.ndarray:
            with ad.no_grad():
                v = _action_forward(p, config, obs_n, q_n,
                                    x_a.reshape(1, h, ACTION_DIM).astype(dtype),
                                    plan.reshape(1, h, TRAJ_DIM).astype(dtype),
                                    np.array([tau]), unmasked)
            return v.value.reshape(-1).astype(np.float64)

        act_flat = euler_sample(act_field, z_a.reshape(-1), n_steps)
        traj_flat = plan_flat
    else:
        n_t = h * TRAJ_DIM

        def joint_field(x: np.ndarray, tau: float) -> np.ndarray:
            x_t = x[:n_t].reshape(1, h, TRAJ_DIM).astype(dtype)
            x_a = x[n_t:].reshape(1, h, ACTION_DIM).astype(dtype)
            with ad.no_grad():
                v_t = _traj_forward(p, config, obs_n, qp_n, x_t, np.array([tau]))
                v_a = _action_forward(p, config, obs_n, q_n, x_a, x_t, np.array([tau]), unmasked)
            return np.concatenate([v_t.value.reshape(-1), v_a.value.reshape(-1)]).astype(np.float64)

        out = euler_sample(joint_field, np.concatenate([z_t.reshape(-1), z_a.reshape(-1)]), n_steps)
        traj_flat, act_flat = out[:n_t], out[n_t:]

    positions = denormalize(traj_flat.reshape(h, TRAJ_DIM), normalizers.trajectory)
    actions = denormalize(act_flat.reshape(h, ACTION_DIM), normalizers.action)
    no_pad = np.zeros(h, dtype=bool)
    return TrajectoryChunk(positions, no_pad), ActionChunk(actions, no_pad)


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, params: dict[str, np.ndarray], config: PolicyConfig,
                    step: int, dataset_fingerprint: str = "",
                    training_config: TrainingConfig | None = None) -> None:
    """Versioned binary container: header JSON + little-endian float64 blob."""
    names = sorted(params)
    header = {
        "step": int(step),
        "config": config.to_dict(),
        "training_config": (training_config or TrainingConfig()).to_dict(),
        "dataset_fingerprint": dataset_fingerprint,
        "config_fingerprint": fingerprint({"config": config.to_dict(),
                                           "dataset": dataset_fingerprint}),
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (params cast to the stored config dtype, header dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataFormatError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", blob[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", blob[12:20])[0]
    if len(blob) < 20 + header_len:
        raise TruncatedFileError("checkpoint header truncated")
    header = json.loads(blob[20:20 + header_len].decode("utf-8"))
    config = PolicyConfig.from_dict(header["config"])
    dtype = config.np_dtype()
    offset = 20 + header_len
    params = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise TruncatedFileError(f"checkpoint blob truncated at {entry['name']}")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype="<f8").reshape(entry["shape"])
        params[entry["name"]] = arr.astype(dtype)
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError("checkpoint has trailing bytes")
    return params, header
