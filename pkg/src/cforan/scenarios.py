"""Canned scenarios used by the experiment scripts and the acceptance suite.

The geometry seeds are fixed: energy saving is a combinatorial problem, so
retraining on a different layout changes the numbers (not the qualitative
behavior).
"""
from __future__ import annotations

import numpy as np

from . import envs, mappo, net_model
from .config import (AgentConfig, MappoConfig, NetworkConfig, PathlossParams,
                     PrecoderConfig, Scenario)

ES_50_USER3 = "Enter the energy-saving mode. Guarantee 50 Mbps for user 3."
UM_LOG = "Maximize the sum of log-rates. No minimum rate requirements."
SUM_RATE_FREE = "Maximize the sum of rates. No minimum rate requirements."


def toy_smoke_network() -> tuple[NetworkConfig, net_model.Topology]:
    """Two radios, two users; one radio covers both, the other is remote."""
    net = NetworkConfig(num_orus=2, num_users=2, area_side_m=500.0,
                        n_tx=2, n_rx=1, n_streams=1, l_max=2,
                        topology_seed=0, channel_seed=5)
    topo = net_model.Topology(
        np.array([[100.0, 100.0], [450.0, 450.0]]),
        np.array([[90.0, 100.0], [120.0, 100.0]]),
        500.0, n_tx=2, n_rx=1, n_streams=1)
    return net, topo


def toy_smoke_env(seed: int) -> envs.OruActivationEnv:
    net, topo = toy_smoke_network()
    fading = net_model.compute_large_scale_fading(topo, net.pathloss)
    env = envs.OruActivationEnv(net, fading, np.array([5.0, 5.0]), seed=seed,
                                lambda_max=10.0)
    env.redraw_channels = False
    return env


def toy_smoke_config() -> MappoConfig:
    # episode length and clipping per the evaluation setup; the learning
    # rates are turned up for the tiny problem
    return MappoConfig(policy_lr=3e-3, critic_lr=3e-3, episode_len=10,
                       clip_eps=0.2)


def intent_timeline_scenario() -> Scenario:
    """Scripted intent timeline: energy saving at loop 10, utility
    maximization at loop 40, user 3 guaranteed 50 Mbps in between."""
    return Scenario(
        name="intent-timeline",
        network=NetworkConfig(
            num_orus=10, num_users=5, area_side_m=1200.0, l_max=6,
            topology_seed=3, channel_seed=3,
            pathloss=PathlossParams(shadowing_sigma_db=8.0, shadowing_seed=3)),
        precoder=PrecoderConfig(rate_tol_mbps=0.05, patience=3, max_iters=80),
        agents=AgentConfig(),
        initial_intent=SUM_RATE_FREE,
        intent_schedule=[(10, ES_50_USER3), (40, UM_LOG)],
        total_loops=60,
    )


def desk_compare_scenario() -> Scenario:
    """Energy-saving comparison point: 20 radios, 8 users, 10 Mbps floors."""
    return Scenario(
        name="desk-compare",
        network=NetworkConfig(
            num_orus=20, num_users=8, area_side_m=2600.0, l_max=8,
            topology_seed=5, channel_seed=5,
            pathloss=PathlossParams(shadowing_sigma_db=8.0, shadowing_seed=5)),
        precoder=PrecoderConfig(rate_tol_mbps=0.05, patience=3, max_iters=80),
        agents=AgentConfig(),
        initial_intent="Enter the energy-saving mode. "
                       "Guarantee 10 Mbps for users 1, 2, 3, 4, 5, 6, 7 and 8.",
    )


def console_demo_scenario() -> Scenario:
    """Small, fast world for driving the operator console."""
    scn = intent_timeline_scenario()
    scn.name = "console-demo"
    scn.total_loops = 60
    return scn


def train_scenario_policy(scenario: Scenario, episodes: int = 600,
                          seed: int = 1, r_min_mbps: float = 10.0,
                          progress=None) -> mappo.PolicyParams:
    """Train the activation policy for a scenario's geometry.

    The policy is trained against a uniform minimum-rate floor: it is the
    generic energy-saving xApp the coordination layer then adapts to each
    specific intent.
    """
    net = scenario.network
    env = envs.make_env(net, np.full(net.num_users, r_min_mbps), seed=0)
    env.redraw_channels = False
    cfg = MappoConfig(policy_lr=1e-3, critic_lr=1e-3,
                      episode_len=scenario.mappo.episode_len,
                      clip_eps=scenario.mappo.clip_eps)
    return envs.train_activation_policy(env, episodes=episodes, cfg=cfg,
                                        seed=seed, select_every=25,
                                        progress=progress)
