"""Intent-to-control orchestration: supervisor translation, user weighting,
O-RU management and monitoring, coordinated over the in-process bus.

One near-RT loop runs weighting -> activation -> precoder solve -> monitoring.
The weighting agent owns the rate multipliers (one dual step per loop, plus
monitor-requested boosts); the O-RU manager owns the violation penalties and
the learned activation policy; monitoring decides which of the two escalates
for a violated user. Converged coefficient vectors are banked in the
retrieval memory and reused when the same environment/intent comes back.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import bus as busmod
from . import mappo, memory as memmod, net_model, precoder
from .config import AgentConfig, PrecoderConfig
from .grammar import Intent, ObjectiveSpec, parse_intent
from .net_model import ChannelSet, LargeScaleFading


class CheckpointRequiredError(RuntimeError):
    """Energy-saving mode needs a trained activation policy."""


class BackendError(RuntimeError):
    pass


@dataclass
class MonitorDecision:
    kind: str                           # ok | boost_weight | raise_penalty
    user: Optional[int] = None          # 0-based index
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.kind == "ok"


@dataclass
class PenaltyState:
    lam: np.ndarray
    lam_max: float = 100.0

    def raise_for(self, user: int, growth: float) -> None:
        self.lam[user] = min(self.lam_max, self.lam[user] * growth)


class HistoryWindow:
    """Ring buffer of the last W near-RT loop snapshots."""

    def __init__(self, window: int):
        self.window = window
        self._rows: list[dict] = []

    def push(self, **row) -> None:
        self._rows.append(row)
        if len(self._rows) > self.window:
            self._rows.pop(0)

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def latest(self) -> Optional[dict]:
        return self._rows[-1] if self._rows else None

    def series(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self._rows])


class GrammarBackend:
    """Deterministic reference reasoner."""

    name = "grammar"

    def translate(self, text: str) -> ObjectiveSpec:
        return parse_intent(text)


class RemoteReasonerBackend:
    """Text-in/JSON-out reasoner client with a strict response schema.

    Any transport failure, timeout or schema violation raises BackendError;
    the supervisor then answers with the grammar backend and flags it.
    """

    name = "remote"
    _REQUIRED = {"utility_kind", "energy_saving", "r_min_mbps", "monitored"}

    def __init__(self, url: str, timeout_s: float = 5.0, post: Optional[Callable] = None):
        self.url = url
        self.timeout_s = timeout_s
        self._post = post or self._default_post

    def _default_post(self, url: str, payload: dict, timeout: float) -> dict:
        import json
        import urllib.request

        req = urllib.request.Request(
            url, data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode())

    def translate(self, text: str) -> ObjectiveSpec:
        try:
            data = self._post(self.url, {"text": text}, self.timeout_s)
        except Exception as exc:
            raise BackendError(f"remote reasoner failed: {exc}") from exc
        if not isinstance(data, dict) or not self._REQUIRED.issubset(data):
            raise BackendError(
                f"remote reasoner response missing fields "
                f"{sorted(self._REQUIRED - set(data or {}))}")
        if data["utility_kind"] not in ("sum_rate", "sum_log_rate"):
            raise BackendError(f"bad utility_kind {data['utility_kind']!r}")
        try:
            return ObjectiveSpec.from_dict(data)
        except Exception as exc:
            raise BackendError(f"malformed remote payload: {exc}") from exc


class Supervisor:
    """Translates operator intents and routes the Table-II style messages."""

    def __init__(self, bus: busmod.MessageBus, backend=None,
                 fallback: Optional[GrammarBackend] = None):
        self.bus = bus
        self.backend = backend or GrammarBackend()
        self.fallback = fallback or GrammarBackend()

    def translate(self, intent: Intent) -> tuple[ObjectiveSpec, bool]:
        """Returns (objective, used_fallback). Grammar errors propagate."""
        used_fallback = False
        try:
            spec = self.backend.translate(intent.text)
        except BackendError:
            spec = self.fallback.translate(intent.text)
            used_fallback = True
        self._route(spec, intent.timestamp, used_fallback)
        return spec, used_fallback

    def _route(self, spec: ObjectiveSpec, loop: int, flagged: bool) -> None:
        constraints = [[k, v] for k, v in sorted(spec.r_min_mbps.items())]
        self.bus.publish("supervisor", busmod.A1_WEIGHTING, "objective",
                         {"objective": spec.utility_kind,
                          "constraints": constraints, "fallback": flagged}, loop)
        self.bus.publish("supervisor", busmod.A1_ORU, "objective",
                         {"objective": "energy_saving" if spec.energy_saving
                          else "full_power",
                          "constraints": constraints, "fallback": flagged}, loop)
        if spec.monitored:
            self.bus.publish("supervisor", busmod.A1_MONITOR, "monitor",
                             {"constraints": [[k, v] for k, v in spec.monitored],
                              "fallback": flagged}, loop)


class UserWeightingAgent:
    """One dual-ascent step per loop plus monitor-driven weight boosts."""

    def __init__(self, num_users: int, agent_cfg: AgentConfig,
                 prec_cfg: PrecoderConfig):
        self.num_users = num_users
        self.cfg = agent_cfg
        self.prec_cfg = prec_cfg
        self.reset(precoder.UtilitySpec())

    def reset(self, utility: precoder.UtilitySpec) -> None:
        self.utility = utility
        self.mu = np.zeros(self.num_users)
        self.boosts = np.ones(self.num_users)
        self.base = np.ones(self.num_users)

    def apply_retrieved(self, experience: memmod.Experience) -> np.ndarray:
        """Adopt stored weights; the dual seed reconstructs mu = alpha - U'."""
        alpha = experience.value[:, 0].copy()
        deriv = 1.0 if self.utility.kind != "energy_saving" else 0.0
        self.mu = np.maximum(0.0, alpha - deriv)
        self.boosts = np.ones(self.num_users)
        self.base = alpha.copy()
        return alpha

    def step(self, history: HistoryWindow,
             monitor_request: Optional[MonitorDecision] = None
             ) -> tuple[np.ndarray, np.ndarray]:
        if monitor_request is not None and monitor_request.kind == "boost_weight":
            self.boosts[monitor_request.user] *= self.cfg.boost_factor
        latest = history.latest
        if latest is not None:
            self.mu = precoder.dual_ascent_update(
                self.mu, latest["rate_mbps"], self.utility)
            target = precoder.priority_weights(latest["rates"], self.mu,
                                               self.utility, self.prec_cfg)
        else:
            target = np.clip(1.0 + self.mu, self.prec_cfg.alpha_floor,
                             self.prec_cfg.alpha_cap)
        # relaxation damps the 1/r ping-pong of the log-utility weights
        d = self.cfg.alpha_damping
        self.base = (1.0 - d) * self.base + d * target
        alpha = np.clip(self.base * self.boosts, self.prec_cfg.alpha_floor,
                        self.prec_cfg.alpha_cap)
        return alpha, self.mu.copy()


class OruManagementAgent:
    """Keeps all radios on outside energy saving; otherwise drives the
    learned policy, raising violation penalties when monitoring asks."""

    def __init__(self, num_orus: int, num_users: int, agent_cfg: AgentConfig,
                 policy: Optional[mappo.PolicyParams] = None):
        self.num_orus = num_orus
        self.num_users = num_users
        self.cfg = agent_cfg
        self.policy = policy
        self.penalties = PenaltyState(
            np.full(num_users, agent_cfg.lambda_init), agent_cfg.lambda_max)
        self.z_prev = np.ones(num_orus, dtype=int)

    def reset(self, lam_seed: Optional[np.ndarray] = None) -> None:
        lam = lam_seed if lam_seed is not None else np.full(
            self.num_users, self.cfg.lambda_init)
        self.penalties = PenaltyState(np.asarray(lam, dtype=float).copy(),
                                      self.cfg.lambda_max)

    def step(self, objective: ObjectiveSpec, history: HistoryWindow,
             fading: LargeScaleFading, r_min_mbps: np.ndarray,
             monitor_request: Optional[MonitorDecision] = None) -> np.ndarray:
        if not objective.energy_saving:
            self.z_prev = np.ones(self.num_orus, dtype=int)
            return self.z_prev.copy()
        if self.policy is None:
            raise CheckpointRequiredError(
                "energy-saving mode needs a trained activation checkpoint; "
                "run training first")
        if monitor_request is not None and monitor_request.kind == "raise_penalty":
            self.penalties.raise_for(monitor_request.user, self.cfg.lambda_growth)
        latest = history.latest
        viol = latest["upsilon"] if latest is not None else np.zeros(self.num_users)
        obs = mappo.build_observations(fading.beta, viol, self.penalties.lam,
                                       self.z_prev, r_min_mbps)
        z = mappo.infer_activations(obs, self.policy)
        self.z_prev = z.copy()
        return z


class MonitoringAgent:
    """Flags persistently violated users and picks the escalation lever."""

    def __init__(self, agent_cfg: AgentConfig):
        self.cfg = agent_cfg

    def step(self, history: HistoryWindow, alpha: np.ndarray,
             lam: np.ndarray, r_min_mbps: np.ndarray) -> MonitorDecision:
        latest = history.latest
        if latest is None:
            return MonitorDecision("ok")
        viol = latest["upsilon"]
        candidates = [k for k in range(viol.size)
                      if r_min_mbps[k] > 0 and viol[k] > self.cfg.viol_tol_mbps]
        if not candidates:
            return MonitorDecision("ok")
        worst = int(max(candidates, key=lambda k: viol[k]))
        if len(history) >= self.cfg.history_window:
            rates = history.series("rate_mbps")[:, worst]
            if rates.max() - rates.min() < self.cfg.stall_tol_mbps:
                return MonitorDecision(
                    "raise_penalty", worst,
                    f"rate of user {worst + 1} converging below its minimum")
        if alpha[worst] < self.cfg.alpha_high:
            return MonitorDecision("boost_weight", worst,
                                   f"user {worst + 1} violated; raising weight")
        return MonitorDecision("raise_penalty", worst,
                               f"weight of user {worst + 1} already high")


@dataclass
class ControlWorld:
    """Everything one intent episode operates on."""

    fading: LargeScaleFading
    channels: ChannelSet
    l_max: int
    p_max_w: float
    agent_cfg: AgentConfig = field(default_factory=AgentConfig)
    prec_cfg: PrecoderConfig = field(default_factory=PrecoderConfig)
    policy: Optional[mappo.PolicyParams] = None
    bus: busmod.MessageBus = field(default_factory=busmod.MessageBus)
    embedder: Optional[memmod.AutoencoderParams] = None
    scaler: Optional[memmod.FeatureScaler] = None

    def __post_init__(self):
        self.num_users, self.num_orus = self.fading.beta.shape
        self.weighting = UserWeightingAgent(self.num_users, self.agent_cfg,
                                            self.prec_cfg)
        self.oru = OruManagementAgent(self.num_orus, self.num_users,
                                      self.agent_cfg, self.policy)
        self.monitoring = MonitoringAgent(self.agent_cfg)
        self.supervisor = Supervisor(self.bus)
        self.history = HistoryWindow(self.agent_cfg.history_window)
        self.objective = ObjectiveSpec()
        self.r_min = np.zeros(self.num_users)
        self.utility = precoder.UtilitySpec(p_max_w=self.p_max_w)
        self.prec_state: Optional[precoder.PrecodingState] = None
        self.monitor_request: Optional[MonitorDecision] = None
        self.retrieved: Optional[memmod.Experience] = None
        self.memory_hit = False
        self.ok_streak = 0
        self.converged_at: Optional[int] = None
        self.stored = False

    def embed_query(self) -> Optional[np.ndarray]:
        if self.embedder is None or self.scaler is None:
            return None
        features = self.scaler.transform(self.fading.beta, self.r_min)
        return memmod.embed(features, self.embedder)

    def set_objective(self, objective: ObjectiveSpec, loop: int,
                      store: Optional[memmod.ExperienceStore] = None) -> None:
        """Start a fresh intent episode, optionally warm-started from memory."""
        self.objective = objective
        self.r_min = objective.r_min_vector(self.num_users)
        self.utility = precoder.UtilitySpec(
            kind=objective.utility_kind, r_min_mbps=self.r_min,
            p_max_w=self.p_max_w, dual_step=self.prec_cfg.dual_step)
        self.weighting.reset(self.utility)
        self.monitor_request = None
        self.ok_streak = 0
        self.converged_at = None
        self.stored = False
        self.retrieved = None
        self.retrieved_pending = False
        self.memory_hit = False
        lam_seed = None
        if store is not None:
            query = self.embed_query()
            if query is not None:
                hit = store.retrieve(query)
                if hit is not None and hit.intent_kind == self._intent_kind():
                    self.retrieved = hit
                    self.retrieved_pending = True
                    self.memory_hit = True
                    lam_seed = hit.value[:, 1]
                    self.bus.publish("memory", busmod.E2_FEEDBACK, "memory-hit",
                                     {"loops_to_converge": hit.loops_to_converge},
                                     loop)
        self.oru.reset(lam_seed)

    def _intent_kind(self) -> str:
        return ("es" if self.objective.energy_saving else "um") + \
            ":" + self.objective.utility_kind

    def bank_experience(self, store: Optional[memmod.ExperienceStore],
                        loops_to_converge: int) -> bool:
        """Persist the converged [alpha, lambda] once per episode."""
        if store is None or self.stored or self.history.latest is None:
            return False
        query = self.embed_query()
        if query is None:
            return False
        latest = self.history.latest
        value = np.stack([latest["alpha"], latest["lam"]], axis=1)
        store.store(memmod.Experience(
            key=query, value=value, intent_kind=self._intent_kind(),
            loops_to_converge=int(loops_to_converge)))
        self.stored = True
        return True

    def run_loop(self, loop: int) -> dict:
        """One near-RT control loop; returns the snapshot record."""
        if self.retrieved_pending:
            alpha = self.weighting.apply_retrieved(self.retrieved)
            mu = self.weighting.mu.copy()
            self.retrieved_pending = False
        else:
            alpha, mu = self.weighting.step(self.history, self.monitor_request)
        z = self.oru.step(self.objective, self.history, self.fading,
                          self.r_min, self.monitor_request)
        self.bus.publish("user-weighting", busmod.E2_PRECODER, "weights",
                         {"alpha": alpha.tolist(), "mu": mu.tolist()}, loop)
        self.bus.publish("oru-management", busmod.E2_PRECODER, "activations",
                         {"z": z.tolist()}, loop)

        assoc = net_model.associate_users(self.fading, z, self.l_max)
        state = precoder.solve(self.channels, assoc, self.utility, z,
                               warm_start=self.prec_state, cfg=self.prec_cfg,
                               update_weights=False, alpha=alpha, mu=mu)
        self.prec_state = state
        upsilon = np.maximum(0.0, self.r_min - state.rate_mbps)
        self.history.push(rates=state.rates.copy(),
                          rate_mbps=state.rate_mbps.copy(),
                          upsilon=upsilon, mu=mu.copy(),
                          lam=self.oru.penalties.lam.copy(), alpha=alpha.copy())

        decision = self.monitoring.step(self.history, alpha,
                                        self.oru.penalties.lam, self.r_min)
        self.monitor_request = None if decision.ok else decision
        if not decision.ok:
            channel = (busmod.A1_WEIGHTING if decision.kind == "boost_weight"
                       else busmod.A1_ORU)
            self.bus.publish("monitoring", channel, decision.kind,
                             {"user": decision.user + 1,
                              "reason": decision.reason}, loop)
        self.ok_streak = self.ok_streak + 1 if decision.ok else 0
        if self.ok_streak == 1 and decision.ok:
            self.converged_at = loop
        if not decision.ok:
            self.converged_at = None
        return {
            "loop": loop,
            "rates_mbps": state.rate_mbps.tolist(),
            "rates": state.rates.tolist(),
            "z": z.tolist(),
            "alpha": alpha.tolist(),
            "mu": mu.tolist(),
            "lam": self.oru.penalties.lam.tolist(),
            "upsilon": upsilon.tolist(),
            "active_count": int(np.sum(z)),
            "active_fraction": float(np.mean(z)),
            "decision": decision.kind,
            "decision_user": None if decision.user is None else decision.user + 1,
            "memory_hit": self.memory_hit,
            "energy_saving": self.objective.energy_saving,
            "solver_converged": bool(state.converged),
        }


def coordination_loop(objective: ObjectiveSpec, world: ControlWorld,
                      store: Optional[memmod.ExperienceStore] = None,
                      start_loop: int = 1) -> dict:
    """Repeat weighting -> activation -> precoding -> monitoring until the
    monitor reports ok for `patience` consecutive loops, or the cap is hit.

    On convergence exactly one (key, [alpha, lambda]) experience is stored.
    Returns the run record with the per-loop trace.
    """
    cfg = world.agent_cfg
    world.set_objective(objective, start_loop, store)
    trace = []
    converged = False
    loop = start_loop
    for i in range(cfg.loop_cap):
        loop = start_loop + i
        trace.append(world.run_loop(loop))
        if world.ok_streak >= cfg.patience:
            converged = True
            break
    converged_at = world.converged_at if converged else None
    if converged:
        loops = (converged_at - start_loop + 1) if converged_at else len(trace)
        world.bank_experience(store, loops)
    violated = []
    if not converged and trace:
        last = np.array(trace[-1]["upsilon"])
        violated = [k + 1 for k in range(last.size)
                    if last[k] > cfg.viol_tol_mbps]
    return {
        "converged": converged,
        "converged_at": converged_at,
        "loops_run": len(trace),
        "loops_to_converge": (converged_at - start_loop + 1) if converged_at else None,
        "violated_users": violated,
        "trace": trace,
    }
