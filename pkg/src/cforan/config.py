"""Dataclass configs for all subsystems plus the YAML scenario loader.

Every tunable the machinery depends on lives here so
that experiments are reproducible from a single scenario file.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, asdict
from typing import Any

import yaml


class ScenarioError(ValueError):
    """Raised by the loader with the offending field in the message."""

    def __init__(self, field_name: str, reason: str):
        self.field_name = field_name
        self.reason = reason
        super().__init__(f"scenario field '{field_name}': {reason}")


@dataclass
class PathlossParams:
    """Log-distance path loss: PL(d) = pl0_db + 10*exponent*log10(max(d, d_min)/d0)."""

    pl0_db: float = 30.0
    d0_m: float = 1.0
    exponent: float = 3.8
    d_min_m: float = 1.0
    shadowing_sigma_db: float = 0.0  # 0 disables shadowing
    shadowing_seed: int = 0


@dataclass
class NetworkConfig:
    """Geometry, antennas and the noise budget of one deployment."""

    num_orus: int = 50
    num_users: int = 20
    area_side_m: float = 500.0
    n_tx: int = 4
    n_rx: int = 2
    n_streams: int = 2
    l_max: int = 8                      # serving O-RUs per user, at most
    p_max_w: float = 1.0                # 30 dBm per O-RU
    bandwidth_hz: float = 20e6
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 9.0
    topology_seed: int = 0
    channel_seed: int = 0
    pathloss: PathlossParams = field(default_factory=PathlossParams)

    @property
    def noise_variance_w(self) -> float:
        dbm = self.noise_density_dbm_hz + self.noise_figure_db
        return 10.0 ** (dbm / 10.0) * 1e-3 * self.bandwidth_hz


@dataclass
class PrecoderConfig:
    """Solver tolerances for the WMMSE / dual-ascent loop."""

    rate_tol_mbps: float = 1e-3
    patience: int = 5
    max_iters: int = 500
    power_bisect_rel_tol: float = 1e-7
    power_bisect_max_iters: int = 60
    rate_floor: float = 1e-6            # bit/s/Hz floor inside 1/r
    alpha_floor: float = 1e-6
    alpha_cap: float = 1e3
    dual_step: float = 0.05             # zeta_k, per Mbps of violation


@dataclass
class MappoConfig:
    """Hyperparameters of the O-RU activation learner."""

    gamma: float = 0.9
    clip_eps: float = 0.2
    entropy_coef: float = 0.01          # c1
    value_coef: float = 0.5             # c2
    episode_len: int = 10               # T
    policy_lr: float = 1e-4             # delta_l
    critic_lr: float = 1e-4             # delta_v
    epochs: int = 4
    policy_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (128, 128)
    adv_norm_eps: float = 1e-8


@dataclass
class AgentConfig:
    """Thresholds of the coordination agents."""

    history_window: int = 10            # W near-RT loops
    alpha_high: float = 50.0
    boost_factor: float = 1.5
    alpha_damping: float = 0.5          # relaxation toward U'(r)+mu per loop
    lambda_growth: float = 2.0
    lambda_max: float = 100.0
    lambda_init: float = 1.0
    viol_tol_mbps: float = 0.1
    stall_tol_mbps: float = 0.05
    patience: int = 3                   # consecutive ok loops to converge
    loop_cap: int = 200


@dataclass
class MemoryConfig:
    """Retrieval store and embedding settings."""

    embed_dim: int = 32
    sim_threshold: float = 0.95
    dedup_tol: float = 0.999
    r_min_ref_mbps: float = 100.0       # R_min scaling before embedding
    train_epochs: int = 300
    train_lr: float = 0.05
    corpus_size: int = 64
    corpus_seed: int = 1234


@dataclass
class BaselineConfig:
    """Step sizes of the uncoordinated DRL+GA baseline."""

    mu_step: float = 0.05               # delta_mu
    lambda_step: float = 0.5            # delta_lambda


@dataclass
class Scenario:
    """Everything one run needs: network, objectives, learners, agents, script."""

    name: str = "default"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    precoder: PrecoderConfig = field(default_factory=PrecoderConfig)
    mappo: MappoConfig = field(default_factory=MappoConfig)
    agents: AgentConfig = field(default_factory=AgentConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    default_r_min_mbps: float = 0.0
    initial_intent: str = "Maximize the sum of rates. No minimum rate requirements."
    # (loop index -> intent text), indices strictly increasing
    intent_schedule: list[tuple[int, str]] = field(default_factory=list)
    total_loops: int = 0                # 0: run until the last intent converges

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data: dict, prefix: str):
    """Construct a dataclass from a dict, reporting unknown/invalid fields."""
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ScenarioError(path, "unknown field")
        ftype = known[key].type
        if isinstance(value, dict) and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, f"{path}.")
        elif key == "intent_schedule":
            if not isinstance(value, list):
                raise ScenarioError(path, "expected a list of [loop, intent] pairs")
            sched = []
            for i, item in enumerate(value):
                if not (isinstance(item, (list, tuple)) and len(item) == 2):
                    raise ScenarioError(f"{path}[{i}]", "expected [loop, intent] pair")
                sched.append((int(item[0]), str(item[1])))
            kwargs[key] = sched
        elif key == "policy_hidden" or key == "critic_hidden":
            kwargs[key] = tuple(int(v) for v in value)
        else:
            kwargs[key] = value
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(prefix.rstrip("."), str(exc)) from exc
    _validate(obj, prefix)
    return obj


_NESTED = {
    "network": NetworkConfig,
    "precoder": PrecoderConfig,
    "mappo": MappoConfig,
    "agents": AgentConfig,
    "memory": MemoryConfig,
    "baseline": BaselineConfig,
    "pathloss": PathlossParams,
}

_POSITIVE = {
    "num_orus", "num_users", "area_side_m", "n_tx", "n_rx", "n_streams",
    "l_max", "p_max_w", "bandwidth_hz", "d0_m", "d_min_m",
    "rate_tol_mbps", "max_iters", "dual_step", "alpha_cap",
    "episode_len", "policy_lr", "critic_lr", "epochs",
    "history_window", "boost_factor", "lambda_growth", "lambda_max",
    "patience", "loop_cap", "embed_dim", "r_min_ref_mbps",
}
_NON_NEGATIVE = {"shadowing_sigma_db", "default_r_min_mbps", "viol_tol_mbps",
                 "stall_tol_mbps", "lambda_init", "total_loops"}
_UNIT_INTERVAL = {"clip_eps", "sim_threshold", "dedup_tol"}


def _validate(obj, prefix: str) -> None:
    for f in fields(obj):
        value = getattr(obj, f.name)
        path = f"{prefix}{f.name}"
        if f.name in _POSITIVE and not (isinstance(value, (int, float)) and value > 0):
            raise ScenarioError(path, f"must be > 0, got {value!r}")
        if f.name in _NON_NEGATIVE and not (isinstance(value, (int, float)) and value >= 0):
            raise ScenarioError(path, f"must be >= 0, got {value!r}")
        if f.name in _UNIT_INTERVAL and not (0.0 < float(value) <= 1.0):
            raise ScenarioError(path, f"must be in (0, 1], got {value!r}")
    if isinstance(obj, NetworkConfig):
        if obj.n_streams > min(obj.n_tx, obj.n_rx):
            raise ScenarioError(f"{prefix}n_streams",
                                "must not exceed min(n_tx, n_rx)")
    if isinstance(obj, MappoConfig):
        if not (0.0 < obj.gamma <= 1.0):
            raise ScenarioError(f"{prefix}gamma", f"must be in (0, 1], got {obj.gamma!r}")
    if isinstance(obj, Scenario):
        loops = [i for i, _ in obj.intent_schedule]
        if loops != sorted(set(loops)):
            raise ScenarioError(f"{prefix}intent_schedule",
                                "loop indices must be strictly increasing")


def load_scenario(path: str) -> Scenario:
    """Load and validate a scenario YAML file."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "scenario file must be a mapping")
    return _build(Scenario, data, "")


def scenario_from_dict(data: dict) -> Scenario:
    return _build(Scenario, data, "")
