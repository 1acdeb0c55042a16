"""Scenario runner, baselines and metrics export.

A scenario fixes the world (geometry, channels, configs) plus a scripted
intent schedule. Four control modes produce comparable run records:

  proposed    coordinated agents (weighting + activation + monitoring + memory)
  drl_ga      same learner but uncoordinated: mu and lambda climb by plain
              gradient steps every loop, monitoring disabled
  greedy      per-user incremental activation of the next-strongest radio
  full_power  all radios on, precoding only
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import agents as agentsmod
from . import bus as busmod
from . import mappo, memory as memmod, net_model, precoder
from .config import Scenario
from .grammar import Intent, ObjectiveSpec, parse_intent

MODES = ("proposed", "drl_ga", "greedy", "full_power")


@dataclass
class RunRecord:
    scenario_name: str
    scenario_hash: str
    mode: str
    snapshots: list[dict] = field(default_factory=list)
    intents: list[dict] = field(default_factory=list)
    messages: list[dict] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def summary(self) -> dict:
        final = self.snapshots[-1] if self.snapshots else {}
        return {
            "mode": self.mode,
            "loops": len(self.snapshots),
            "final_active_count": final.get("active_count"),
            "final_active_fraction": final.get("active_fraction"),
            "final_rates_mbps": final.get("rates_mbps"),
            "final_violations_mbps": final.get("upsilon"),
            "episodes": self.episodes,
            "wall_clock_s": self.wall_clock_s,
        }


def build_world(scenario: Scenario,
                policy: Optional[mappo.PolicyParams] = None,
                with_memory: bool = True,
                bus: Optional[busmod.MessageBus] = None) -> agentsmod.ControlWorld:
    net = scenario.network
    topo, fading, chans = net_model.channels_for(net)
    world = agentsmod.ControlWorld(
        fading=fading, channels=chans, l_max=net.l_max, p_max_w=net.p_max_w,
        agent_cfg=scenario.agents, prec_cfg=scenario.precoder, policy=policy,
        bus=bus or busmod.MessageBus())
    world.topology = topo
    if with_memory:
        embedder, scaler = memmod.build_embedder(fading.beta, scenario.memory,
                                                 net.num_users)
        world.embedder = embedder
        world.scaler = scaler
    return world


class ScenarioRunner:
    """Drives one mode over the scripted intent schedule, loop by loop."""

    def __init__(self, scenario: Scenario, mode: str = "proposed",
                 policy: Optional[mappo.PolicyParams] = None,
                 store: Optional[memmod.ExperienceStore] = None,
                 bus: Optional[busmod.MessageBus] = None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.scenario = scenario
        self.mode = mode
        self.store = store if store is not None else memmod.ExperienceStore(
            scenario.memory)
        self.world = build_world(scenario, policy,
                                 with_memory=(mode == "proposed"), bus=bus)
        self.record = RunRecord(scenario.name, scenario.hash(), mode)
        self._schedule = dict(scenario.intent_schedule)
        self._pending: list[str] = []
        self._greedy_state: Optional[dict] = None
        self.loop = 0
        self.finished = False

    # -- intent handling -------------------------------------------------
    def submit_intent(self, text: str) -> ObjectiveSpec:
        """Validate now, apply at the next loop boundary."""
        objective = parse_intent(text)
        self._pending.append(text)
        return objective

    def _apply_intent(self, text: str) -> None:
        objective, fallback = self.world.supervisor.translate(
            Intent(text, timestamp=self.loop + 1))
        # only the coordinated mode consults the retrieval memory
        store = self.store if self.mode == "proposed" else None
        self.world.set_objective(objective, self.loop + 1, store)
        if self.mode == "greedy":
            self._greedy_state = {"z": np.zeros(self.world.num_orus, dtype=int),
                                  "user": 0, "done": False,
                                  "activated_in_pass": False,
                                  "infeasible": set()}
        self.record.intents.append({"loop": self.loop + 1, "text": text,
                                    "objective": objective.as_dict(),
                                    "fallback": fallback,
                                    "memory_hit": self.world.memory_hit})

    # -- per-mode loop bodies ---------------------------------------------
    def _loop_proposed(self) -> dict:
        return self.world.run_loop(self.loop)

    def _loop_drl_ga(self) -> dict:
        world = self.world
        base = self.scenario.baseline
        latest = world.history.latest
        upsilon = (latest["upsilon"] if latest is not None
                   else np.zeros(world.num_users))
        # uncoordinated: both coefficient sets climb on raw violations
        world.weighting.mu = world.weighting.mu + base.mu_step * upsilon
        lam = world.oru.penalties.lam
        world.oru.penalties.lam = np.minimum(
            world.agent_cfg.lambda_max, lam + base.lambda_step * upsilon)
        rates = latest["rates"] if latest is not None else np.zeros(world.num_users)
        alpha = precoder.priority_weights(rates, world.weighting.mu,
                                          world.utility, world.prec_cfg)
        z = world.oru.step(world.objective, world.history, world.fading,
                           world.r_min, None)
        assoc = net_model.associate_users(world.fading, z, world.l_max)
        state = precoder.solve(world.channels, assoc, world.utility, z,
                               warm_start=world.prec_state, cfg=world.prec_cfg,
                               update_weights=False, alpha=alpha,
                               mu=world.weighting.mu)
        world.prec_state = state
        upsilon = np.maximum(0.0, world.r_min - state.rate_mbps)
        world.history.push(rates=state.rates.copy(),
                           rate_mbps=state.rate_mbps.copy(), upsilon=upsilon,
                           mu=world.weighting.mu.copy(),
                           lam=world.oru.penalties.lam.copy(),
                           alpha=alpha.copy())
        ok = bool(np.all(upsilon <= world.agent_cfg.viol_tol_mbps))
        world.ok_streak = world.ok_streak + 1 if ok else 0
        if ok and world.ok_streak == 1:
            world.converged_at = self.loop
        if not ok:
            world.converged_at = None
        return self._snapshot(state, z, alpha, world.weighting.mu, upsilon,
                              "ok" if ok else "violated")

    def _loop_greedy(self) -> dict:
        """One greedy expansion step per loop until every user is satisfied."""
        world = self.world
        gs = self._greedy_state
        cfg = world.agent_cfg
        order = np.argsort(-world.fading.beta, axis=1)
        r_min = world.r_min
        while not gs["done"]:
            if gs["user"] >= world.num_users:
                # later activations can disturb earlier users: sweep again
                # until a whole pass leaves everyone satisfied (or exhausted)
                if not gs["activated_in_pass"]:
                    gs["done"] = True
                    break
                gs["user"] = 0
                gs["activated_in_pass"] = False
                continue
            k = gs["user"]
            rate_k = (self._solve_static(gs["z"], fresh=True).rate_mbps[k]
                      if np.any(gs["z"]) else 0.0)
            if rate_k >= r_min[k] - cfg.viol_tol_mbps:
                gs["user"] += 1                  # already satisfied: no activation
                continue
            remaining = [l for l in order[k] if not gs["z"][l]]
            if not remaining:
                gs["infeasible"].add(k + 1)
                gs["user"] += 1
                continue
            gs["z"][int(remaining[0])] = 1
            gs["activated_in_pass"] = True
            break                                # one activation per loop
        z = gs["z"].copy()
        state = (self._solve_static(z, fresh=True) if np.any(z)
                 else self._zero_state())
        upsilon = np.maximum(0.0, r_min - state.rate_mbps)
        satisfied = bool(np.all(upsilon <= cfg.viol_tol_mbps))
        if gs["done"] or (satisfied and gs["user"] >= world.num_users):
            gs["done"] = True
            if world.converged_at is None:
                world.converged_at = self.loop
            world.ok_streak += 1
        return self._snapshot(state, z, state.alpha, state.mu, upsilon,
                              "ok" if satisfied else "expanding")

    def _loop_full_power(self) -> dict:
        world = self.world
        z = np.ones(world.num_orus, dtype=int)
        state = self._solve_static(z)
        upsilon = np.maximum(0.0, world.r_min - state.rate_mbps)
        ok = bool(np.all(upsilon <= world.agent_cfg.viol_tol_mbps))
        world.ok_streak = world.ok_streak + 1 if ok else 0
        if ok and world.converged_at is None:
            world.converged_at = self.loop
        return self._snapshot(state, z, state.alpha, state.mu, upsilon,
                              "ok" if ok else "violated")

    def _solve_static(self, z: np.ndarray,
                      fresh: bool = False) -> precoder.PrecodingState:
        world = self.world
        assoc = net_model.associate_users(world.fading, z, world.l_max)
        state = precoder.solve(world.channels, assoc, world.utility, z,
                               warm_start=None if fresh else world.prec_state,
                               cfg=world.prec_cfg, update_weights=True)
        if not fresh:
            world.prec_state = state
        return state

    def _zero_state(self) -> precoder.PrecodingState:
        world = self.world
        k = world.num_users
        return precoder.PrecodingState(
            V=np.zeros((k, world.num_orus, 1, 1), dtype=complex),
            U=np.zeros((k, 1, 1), dtype=complex),
            W=np.zeros((k, 1, 1), dtype=complex),
            mu=np.zeros(k), alpha=np.ones(k), rates=np.zeros(k),
            rate_mbps=np.zeros(k))

    def _snapshot(self, state, z, alpha, mu, upsilon, decision) -> dict:
        world = self.world
        return {
            "loop": self.loop,
            "rates_mbps": state.rate_mbps.tolist(),
            "rates": state.rates.tolist(),
            "z": np.asarray(z, dtype=int).tolist(),
            "alpha": np.asarray(alpha, float).tolist(),
            "mu": np.asarray(mu, float).tolist(),
            "lam": world.oru.penalties.lam.tolist(),
            "upsilon": np.asarray(upsilon, float).tolist(),
            "active_count": int(np.sum(z)),
            "active_fraction": float(np.mean(np.asarray(z, float))),
            "decision": decision,
            "decision_user": None,
            "memory_hit": world.memory_hit,
            "energy_saving": world.objective.energy_saving,
            "solver_converged": bool(state.converged),
        }

    # -- driving ----------------------------------------------------------
    def step(self) -> dict:
        """Advance one near-RT loop; applies due intents at the boundary."""
        if self.loop == 0:
            self._apply_intent(self.scenario.initial_intent)
        if (self.loop + 1) in self._schedule:
            self._apply_intent(self._schedule[self.loop + 1])
        elif self._pending:
            self._apply_intent(self._pending.pop(0))
        self.loop += 1
        body = {"proposed": self._loop_proposed, "drl_ga": self._loop_drl_ga,
                "greedy": self._loop_greedy,
                "full_power": self._loop_full_power}[self.mode]
        snapshot = body()
        self.record.snapshots.append(snapshot)
        return snapshot

    def _record_episode(self) -> None:
        world = self.world
        if self.mode in ("proposed", "drl_ga"):
            converged = world.ok_streak >= world.agent_cfg.patience
        else:
            converged = world.converged_at is not None
        entry = {
            "intent": self.record.intents[-1]["text"] if self.record.intents else "",
            "converged": converged,
            "converged_at": world.converged_at,
            "loops_to_converge": (world.converged_at - self._episode_start() + 1
                                  if world.converged_at is not None else None),
            "memory_hit": world.memory_hit,
        }
        if self.mode == "greedy" and self._greedy_state is not None:
            entry["infeasible_users"] = sorted(self._greedy_state["infeasible"])
        self.record.episodes.append(entry)
        if self.mode == "proposed" and converged:
            loops = entry["loops_to_converge"] or len(self.record.snapshots)
            self.world.bank_experience(self.store, loops)

    def _episode_done(self) -> bool:
        if self.mode in ("proposed", "drl_ga"):
            return self.world.ok_streak >= self.scenario.agents.patience
        return self.world.ok_streak >= 1

    def run(self) -> RunRecord:
        t0 = time.time()
        cfg = self.scenario.agents
        total = self.scenario.total_loops
        if total > 0:
            for _ in range(total):
                self.step()
                if (self.loop + 1) in self._schedule:
                    self._record_episode()
            self._record_episode()
        else:
            # run every scheduled episode to convergence (or the loop cap)
            boundaries = sorted(self._schedule)
            while True:
                self.step()
                if (self.loop + 1) in self._schedule:
                    self._record_episode()
                    continue
                next_boundary = next((b for b in boundaries if b > self.loop), None)
                capped = self.loop - self._episode_start() + 1 >= cfg.loop_cap
                if next_boundary is None and (self._episode_done() or capped):
                    self._record_episode()
                    break
        self.record.messages = [m.as_record() for m in self.world.bus.record()]
        self.record.wall_clock_s = time.time() - t0
        self.finished = True
        return self.record

    def _episode_start(self) -> int:
        return self.record.intents[-1]["loop"] if self.record.intents else 1


def run_scenario(scenario: Scenario, mode: str = "proposed",
                 policy: Optional[mappo.PolicyParams] = None,
                 store: Optional[memmod.ExperienceStore] = None) -> RunRecord:
    runner = ScenarioRunner(scenario, mode, policy, store)
    return runner.run()


SERIES_COLUMNS = ("loop", "active_count", "active_fraction", "decision")
PER_USER_COLUMNS = ("rate_mbps", "alpha", "mu", "lam", "upsilon")


def export_metrics(record: RunRecord, outdir: str) -> dict[str, str]:
    """Columnar per-loop series, a summary and the message log.

    Column order is stable: the scalar columns, then each per-user family
    expanded user-major (rate_mbps_u1, rate_mbps_u2, ...).
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    num_users = len(record.snapshots[0]["rates_mbps"]) if record.snapshots else 0
    header = list(SERIES_COLUMNS)
    for family in PER_USER_COLUMNS:
        header += [f"{family}_u{k + 1}" for k in range(num_users)]
    lines = [",".join(header)]
    for snap in record.snapshots:
        row = [str(snap["loop"]), str(snap["active_count"]),
               f"{snap['active_fraction']:.6f}", snap["decision"]]
        for family in PER_USER_COLUMNS:
            key = family if family != "rate_mbps" else "rates_mbps"
            row += [f"{v:.6f}" for v in snap[key]]
        lines.append(",".join(row))
    series_path = out / f"{record.mode}_series.csv"
    series_path.write_text("\n".join(lines) + "\n")

    summary_path = out / f"{record.mode}_summary.json"
    summary_path.write_text(json.dumps(record.summary(), indent=2) + "\n")

    messages_path = out / f"{record.mode}_messages.jsonl"
    with open(messages_path, "w") as fh:
        for msg in record.messages:
            fh.write(json.dumps(msg) + "\n")
    return {"series": str(series_path), "summary": str(summary_path),
            "messages": str(messages_path)}


def compare_modes(scenario: Scenario, policy: Optional[mappo.PolicyParams],
                  modes: tuple[str, ...] = MODES,
                  store: Optional[memmod.ExperienceStore] = None) -> dict:
    """Run every mode on the same scenario; returns mode -> summary."""
    results = {}
    for mode in modes:
        record = run_scenario(scenario, mode, policy=policy, store=store)
        results[mode] = record.summary()
        results[mode]["record"] = record
    return results
