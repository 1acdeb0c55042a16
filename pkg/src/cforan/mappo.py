"""Multi-agent PPO for O-RU activation: one on/off policy per radio unit and
a centralized critic over the joint observation.

Action 0 = off, 1 = on. All agents share one reward that charges the active
fraction, the penalty-weighted rate violations and activation churn. The
finite-horizon advantage at step t sums discounted one-step TD residuals up
to the end of the episode (terminal observation bootstraps the tail).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .config import MappoConfig
from .nets import Adam, Mlp, log_softmax


class NumericError(RuntimeError):
    pass


def build_observations(beta: np.ndarray, violations_mbps: np.ndarray,
                       penalties: np.ndarray, z_prev: np.ndarray,
                       r_min_mbps: np.ndarray | None = None) -> np.ndarray:
    """Per-agent vector [(log beta_kl, tanh(lambda_k * viol_k)) for k, z_l_prev].

    Violations are normalized by R_min (dimensionless shortfall) before the
    penalty weighting so the tanh argument is scale-free; users without a
    minimum rate contribute zero.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta entries must be positive (log is taken)")
    num_users, num_orus = beta.shape
    viol = np.asarray(violations_mbps, dtype=float)
    if np.any(viol < 0):
        raise ValueError("violations must be non-negative")
    if r_min_mbps is not None:
        r_min = np.asarray(r_min_mbps, dtype=float)
        viol = np.divide(viol, r_min, out=np.zeros_like(viol), where=r_min > 0)
    pressure = np.tanh(np.asarray(penalties, dtype=float) * viol)
    obs = np.empty((num_orus, 2 * num_users + 1))
    obs[:, 0:2 * num_users:2] = np.log(beta).T
    obs[:, 1:2 * num_users:2] = pressure[None, :]
    obs[:, -1] = np.asarray(z_prev, dtype=float)
    return obs


def compute_reward(z: np.ndarray, z_prev: np.ndarray,
                   violations_mbps: np.ndarray, penalties: np.ndarray,
                   r_min_mbps: np.ndarray | None = None) -> float:
    """R = -(1/L) sum z - (1/K) sum lambda*viol - (1/L) sum |z - z_prev|."""
    z = np.asarray(z, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    viol = np.asarray(violations_mbps, dtype=float)
    if r_min_mbps is not None:
        r_min = np.asarray(r_min_mbps, dtype=float)
        viol = np.divide(viol, r_min, out=np.zeros_like(viol), where=r_min > 0)
    lam = np.asarray(penalties, dtype=float)
    return float(-z.mean() - (lam * viol).mean() - np.abs(z - z_prev).mean())


@dataclass
class Trajectory:
    """One episode: T steps plus the terminal joint observation."""

    obs: np.ndarray                     # (T, L, obs_dim) per-agent observations
    actions: np.ndarray                 # (T, L) ints
    log_probs: np.ndarray               # (T, L) log pi_old(a|o) at collection
    rewards: np.ndarray                 # (T,)
    terminal_obs: np.ndarray            # (L, obs_dim)

    @property
    def episode_len(self) -> int:
        return self.rewards.shape[0]

    def joint_obs(self) -> np.ndarray:
        """(T+1, L*obs_dim) flattened joint observations, terminal last."""
        t, l, d = self.obs.shape
        stacked = np.concatenate([self.obs.reshape(t, l * d),
                                  self.terminal_obs.reshape(1, l * d)])
        return stacked


@dataclass
class PolicyParams:
    """Per-agent policies, shared critic and their optimizer state."""

    policies: list[Mlp]
    critic: Mlp
    cfg: MappoConfig = field(default_factory=MappoConfig)
    policy_opts: list[Adam] = field(default_factory=list)
    critic_opt: Optional[Adam] = None

    @classmethod
    def create(cls, num_orus: int, num_users: int, cfg: MappoConfig,
               seed: int = 0, obs_loc: np.ndarray | None = None,
               obs_scale: np.ndarray | None = None) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        obs_dim = 2 * num_users + 1
        policies = []
        for _ in range(num_orus):
            net = Mlp.create((obs_dim, *cfg.policy_hidden, 2), rng)
            net.input_loc = None if obs_loc is None else np.asarray(obs_loc, float)
            net.input_scale = None if obs_scale is None else np.asarray(obs_scale, float)
            policies.append(net)
        critic = Mlp.create((num_orus * obs_dim, *cfg.critic_hidden, 1), rng)
        if obs_loc is not None:
            critic.input_loc = np.tile(obs_loc, num_orus)
            critic.input_scale = np.tile(obs_scale, num_orus)
        params = cls(policies, critic, cfg)
        params.policy_opts = [Adam(lr=cfg.policy_lr) for _ in range(num_orus)]
        params.critic_opt = Adam(lr=cfg.critic_lr)
        return params

    @property
    def num_agents(self) -> int:
        return len(self.policies)


class Env(Protocol):
    """One step runs a near-RT loop (precoder solve under the new z)."""

    def reset(self) -> np.ndarray: ...
    def step(self, z: np.ndarray) -> tuple[float, np.ndarray]: ...


def compute_advantages(trajectory: Trajectory, critic: Mlp,
                       gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted sums of TD residuals and of raw rewards (targets).

    advantage_t = sum_{i=0}^{T-t-1} gamma^i (R_{t+i} + gamma V(o_{t+i+1}) - V(o_{t+i}))
    target_t    = sum_{i=0}^{T-t-1} gamma^i R_{t+i}
    """
    rewards = trajectory.rewards
    horizon = rewards.shape[0]
    values = critic(trajectory.joint_obs())[:, 0]
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.empty(horizon)
    targets = np.empty(horizon)
    acc_a = 0.0
    acc_g = 0.0
    for t in range(horizon - 1, -1, -1):
        acc_a = deltas[t] + gamma * acc_a
        acc_g = rewards[t] + gamma * acc_g
        adv[t] = acc_a
        targets[t] = acc_g
    return adv, targets


def standardize(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def policy_loss_and_grads(policy: Mlp, obs: np.ndarray, actions: np.ndarray,
                          old_log_probs: np.ndarray, advantages: np.ndarray,
                          clip_eps: float):
    """Clipped surrogate and entropy of one agent, with parameter gradients.

    Returns (l_clip, l_ent, grads of -(l_clip + c1*l_ent) deferred to caller:
    we hand back d(l_clip)/dtheta and d(l_ent)/dtheta separately).
    """
    n = obs.shape[0]
    logits, cache = policy.forward(obs)
    logp = log_softmax(logits)
    p = np.exp(logp)
    taken = logp[np.arange(n), actions]
    ratio = np.exp(taken - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    per_sample = np.minimum(unclipped, clipped)
    l_clip = float(per_sample.mean())
    entropy = -np.sum(p * logp, axis=1)
    l_ent = float(entropy.mean())

    # d l_clip / d logits: gradient flows only where the unclipped branch wins
    active = (unclipped <= clipped).astype(float)
    dtaken = active * advantages * ratio / n
    dlogits_clip = -p * dtaken[:, None]
    dlogits_clip[np.arange(n), actions] += dtaken
    # d l_ent / d logits = -p_j (logp_j + H) / n
    dlogits_ent = -p * (logp + entropy[:, None]) / n

    grads_clip = policy.backward(cache, dlogits_clip)
    grads_ent = policy.backward(cache, dlogits_ent)
    return l_clip, l_ent, grads_clip, grads_ent


def value_loss_and_grads(critic: Mlp, joint_obs: np.ndarray,
                         targets: np.ndarray):
    """L_V = mean (V(o_t) - G_t)^2 with critic parameter gradients."""
    values, cache = critic.forward(joint_obs)
    err = values[:, 0] - targets
    l_v = float(np.mean(err ** 2))
    dvalues = (2.0 * err / err.shape[0])[:, None]
    grads = critic.backward(cache, dvalues)
    return l_v, grads


def ppo_losses(batch: Trajectory, params: PolicyParams,
               advantages: np.ndarray, targets: np.ndarray) -> dict:
    """Evaluate L_CLIP, L_ENT, L_V and the combined per-agent losses.

    The old-policy probabilities are the ones recorded in the batch at
    collection time.
    """
    cfg = params.cfg
    joint = batch.joint_obs()[:-1]
    l_v, _ = value_loss_and_grads(params.critic, joint, targets)
    out = {"l_v": l_v, "l_clip": [], "l_ent": [], "total": []}
    for l, policy in enumerate(params.policies):
        l_clip, l_ent, _, _ = policy_loss_and_grads(
            policy, batch.obs[:, l], batch.actions[:, l], batch.log_probs[:, l],
            advantages, cfg.clip_eps)
        out["l_clip"].append(l_clip)
        out["l_ent"].append(l_ent)
        out["total"].append(-l_clip - cfg.entropy_coef * l_ent + cfg.value_coef * l_v)
    return out


def collect_episode(env: Env, params: PolicyParams,
                    rng: np.random.Generator) -> Trajectory:
    cfg = params.cfg
    obs = env.reset()
    num_agents = params.num_agents
    all_obs, all_actions, all_logp, all_rewards = [], [], [], []
    for _ in range(cfg.episode_len):
        actions = np.empty(num_agents, dtype=int)
        logp_taken = np.empty(num_agents)
        for l, policy in enumerate(params.policies):
            logp = log_softmax(policy(obs[l][None, :]))[0]
            a = int(rng.choice(2, p=np.exp(logp) / np.exp(logp).sum()))
            actions[l] = a
            logp_taken[l] = logp[a]
        reward, next_obs = env.step(actions)
        all_obs.append(obs)
        all_actions.append(actions)
        all_logp.append(logp_taken)
        all_rewards.append(reward)
        obs = next_obs
    return Trajectory(np.array(all_obs), np.array(all_actions),
                      np.array(all_logp), np.array(all_rewards),
                      terminal_obs=np.array(obs))


def train_iteration(env: Env, params: PolicyParams,
                    rng: np.random.Generator) -> dict:
    """One full learner iteration: collect an episode, estimate advantages,
    run `epochs` clipped-surrogate updates per agent plus critic updates.

    A non-finite loss aborts the parameter update and flags the iteration.
    """
    cfg = params.cfg
    traj = collect_episode(env, params, rng)
    adv_raw, targets = compute_advantages(traj, params.critic, cfg.gamma)
    adv = standardize(adv_raw, cfg.adv_norm_eps)
    stats = {"mean_reward": float(traj.rewards.mean()),
             "active_fraction": float(traj.actions.mean()),
             "violation_sum": getattr(env, "last_violation_sum", None),
             "aborted": False, "l_clip": 0.0, "l_ent": 0.0, "l_v": 0.0}

    old_logp = traj.log_probs
    for _ in range(cfg.epochs):
        joint = traj.joint_obs()[:-1]
        l_v, critic_grads = value_loss_and_grads(params.critic, joint, targets)
        if not np.isfinite(l_v):
            stats["aborted"] = True
            return stats
        for l, policy in enumerate(params.policies):
            l_clip, l_ent, g_clip, g_ent = policy_loss_and_grads(
                policy, traj.obs[:, l], traj.actions[:, l], old_logp[:, l],
                adv, cfg.clip_eps)
            if not (np.isfinite(l_clip) and np.isfinite(l_ent)):
                stats["aborted"] = True
                return stats
            # descend L_l = -L_CLIP - c1 L_ENT (+ c2 L_V, theta-independent)
            grads = [(-(gc_w) - cfg.entropy_coef * ge_w,
                      -(gc_b) - cfg.entropy_coef * ge_b)
                     for (gc_w, gc_b), (ge_w, ge_b) in zip(g_clip, g_ent)]
            params.policy_opts[l].step(policy, grads)
            stats["l_clip"], stats["l_ent"] = l_clip, l_ent
        params.critic_opt.step(params.critic, critic_grads)
        stats["l_v"] = l_v
    return stats


def infer_activations(observations: np.ndarray,
                      params: PolicyParams) -> np.ndarray:
    """Greedy per-agent action; equal logits break toward off (energy bias)."""
    z = np.empty(params.num_agents, dtype=int)
    for l, policy in enumerate(params.policies):
        logits = policy(observations[l][None, :])[0]
        z[l] = 1 if logits[1] > logits[0] else 0
    return z


def _opt_arrays(opt: Adam, prefix: str) -> dict:
    if not opt.m:
        return {}
    out = {f"{prefix}_t": np.array([opt.t])}
    out[f"{prefix}_m"] = np.concatenate([a.ravel() for a in opt.m])
    out[f"{prefix}_v"] = np.concatenate([a.ravel() for a in opt.v])
    return out


def _restore_opt(opt: Adam, net: Mlp, data, prefix: str) -> None:
    if f"{prefix}_t" not in data:
        return
    opt.t = int(data[f"{prefix}_t"][0])
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    for name, slot in ((f"{prefix}_m", "m"), (f"{prefix}_v", "v")):
        flat = data[name]
        arrays, idx = [], 0
        for p in params:
            arrays.append(flat[idx:idx + p.size].reshape(p.shape).copy())
            idx += p.size
        setattr(opt, slot, arrays)


def save_checkpoint(path: str, params: PolicyParams, num_users: int) -> None:
    """Versioned binary: header (version, K, L, shapes) + weights + Adam state."""
    cfg = params.cfg
    header = {
        "version": 1,
        "num_users": num_users,
        "num_orus": params.num_agents,
        "policy_sizes": list(params.policies[0].sizes),
        "critic_sizes": list(params.critic.sizes),
        "gamma": cfg.gamma, "clip_eps": cfg.clip_eps,
        "entropy_coef": cfg.entropy_coef, "value_coef": cfg.value_coef,
        "episode_len": cfg.episode_len, "policy_lr": cfg.policy_lr,
        "critic_lr": cfg.critic_lr, "epochs": cfg.epochs,
        "policy_hidden": list(cfg.policy_hidden),
        "critic_hidden": list(cfg.critic_hidden),
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for l, net in enumerate(params.policies):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"p{l}_w{i}"] = w
            arrays[f"p{l}_b{i}"] = b
        if net.input_loc is not None:
            arrays[f"p{l}_loc"] = net.input_loc
            arrays[f"p{l}_scale"] = net.input_scale
        if params.policy_opts:
            arrays.update(_opt_arrays(params.policy_opts[l], f"p{l}_opt"))
    for i, (w, b) in enumerate(zip(params.critic.weights, params.critic.biases)):
        arrays[f"c_w{i}"] = w
        arrays[f"c_b{i}"] = b
    if params.critic.input_loc is not None:
        arrays["c_loc"] = params.critic.input_loc
        arrays["c_scale"] = params.critic.input_scale
    if params.critic_opt is not None:
        arrays.update(_opt_arrays(params.critic_opt, "c_opt"))
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> tuple[PolicyParams, int]:
    """Returns (params, num_users)."""
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    cfg = MappoConfig(
        gamma=header["gamma"], clip_eps=header["clip_eps"],
        entropy_coef=header["entropy_coef"], value_coef=header["value_coef"],
        episode_len=header["episode_len"], policy_lr=header["policy_lr"],
        critic_lr=header["critic_lr"], epochs=header["epochs"],
        policy_hidden=tuple(header["policy_hidden"]),
        critic_hidden=tuple(header["critic_hidden"]))
    policies = []
    for l in range(header["num_orus"]):
        n_layers = len(header["policy_sizes"]) - 1
        weights = [data[f"p{l}_w{i}"] for i in range(n_layers)]
        biases = [data[f"p{l}_b{i}"] for i in range(n_layers)]
        net = Mlp(weights, biases)
        if f"p{l}_loc" in data:
            net.input_loc = data[f"p{l}_loc"]
            net.input_scale = data[f"p{l}_scale"]
        policies.append(net)
    n_layers = len(header["critic_sizes"]) - 1
    critic = Mlp([data[f"c_w{i}"] for i in range(n_layers)],
                 [data[f"c_b{i}"] for i in range(n_layers)])
    if "c_loc" in data:
        critic.input_loc = data["c_loc"]
        critic.input_scale = data["c_scale"]
    params = PolicyParams(policies, critic, cfg)
    params.policy_opts = [Adam(lr=cfg.policy_lr) for _ in policies]
    params.critic_opt = Adam(lr=cfg.critic_lr)
    for l, net in enumerate(policies):
        _restore_opt(params.policy_opts[l], net, data, f"p{l}_opt")
    _restore_opt(params.critic_opt, critic, data, "c_opt")
    return params, header["num_users"]
