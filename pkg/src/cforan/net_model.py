"""Network geometry, large-scale fading, MIMO channels and user association.

Conventions: K users, L radio units. beta is a (K, L) matrix of linear path
gains, H a (K, L, n_rx, n_tx) complex array. Everything is pure data after
construction and safe to share read-only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig, PathlossParams


@dataclass(frozen=True)
class Topology:
    oru_positions: np.ndarray           # (L, 2) meters
    user_positions: np.ndarray          # (K, 2) meters
    area_side_m: float
    n_tx: int = 4
    n_rx: int = 2
    n_streams: int = 2

    @property
    def num_orus(self) -> int:
        return self.oru_positions.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    def __post_init__(self):
        if self.n_streams > min(self.n_tx, self.n_rx):
            raise ValueError("n_streams must not exceed min(n_tx, n_rx)")
        for name, pos in (("oru", self.oru_positions), ("user", self.user_positions)):
            if np.any(pos < 0) or np.any(pos > self.area_side_m):
                raise ValueError(f"{name} positions outside [0, {self.area_side_m}]^2")


@dataclass(frozen=True)
class LargeScaleFading:
    beta: np.ndarray                    # (K, L) linear gains, strictly positive

    def __post_init__(self):
        if not np.all(np.isfinite(self.beta)) or np.any(self.beta <= 0):
            raise ValueError("beta entries must be strictly positive and finite")


@dataclass(frozen=True)
class ChannelSet:
    H: np.ndarray                       # (K, L, n_rx, n_tx) complex
    noise_variance: float               # sigma^2, watts
    bandwidth_hz: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.H)):
            raise ValueError("channel entries must be finite")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")


@dataclass(frozen=True)
class Association:
    serving_sets: tuple[tuple[int, ...], ...]   # per user, beta-descending
    served_sets: tuple[tuple[int, ...], ...]    # per O-RU
    l_max: int

    @property
    def num_users(self) -> int:
        return len(self.serving_sets)

    @property
    def num_orus(self) -> int:
        return len(self.served_sets)


def generate_topology(seed: int, num_orus: int, num_users: int,
                      area_side_m: float, *, n_tx: int = 4, n_rx: int = 2,
                      n_streams: int = 2) -> Topology:
    """Drop O-RUs and users uniformly i.i.d. in the square, deterministically."""
    if num_orus < 1 or num_users < 1:
        raise ValueError("need at least one O-RU and one user")
    if area_side_m <= 0:
        raise ValueError("area side must be positive")
    rng = np.random.default_rng(seed)
    oru = rng.uniform(0.0, area_side_m, size=(num_orus, 2))
    users = rng.uniform(0.0, area_side_m, size=(num_users, 2))
    return Topology(oru, users, area_side_m, n_tx=n_tx, n_rx=n_rx, n_streams=n_streams)


def compute_large_scale_fading(topology: Topology,
                               params: PathlossParams | None = None) -> LargeScaleFading:
    """beta_{k,l} = 10^(-PL(d)/10) with log-distance path loss and optional
    log-normal shadowing."""
    params = params or PathlossParams()
    d = np.linalg.norm(
        topology.user_positions[:, None, :] - topology.oru_positions[None, :, :],
        axis=-1,
    )
    d = np.maximum(d, params.d_min_m)
    pl_db = params.pl0_db + 10.0 * params.exponent * np.log10(d / params.d0_m)
    if params.shadowing_sigma_db > 0:
        rng = np.random.default_rng(params.shadowing_seed)
        pl_db = pl_db + rng.normal(0.0, params.shadowing_sigma_db, size=d.shape)
    return LargeScaleFading(10.0 ** (-pl_db / 10.0))


def draw_channels(fading: LargeScaleFading, seed: int, *, n_rx: int = 2,
                  n_tx: int = 4, noise_variance: float | None = None,
                  bandwidth_hz: float = 20e6,
                  noise_density_dbm_hz: float = -174.0,
                  noise_figure_db: float = 9.0) -> ChannelSet:
    """H_{k,l} = sqrt(beta_{k,l}) * G with i.i.d. unit-variance CN(0,1) entries."""
    beta = fading.beta
    num_users, num_orus = beta.shape
    rng = np.random.default_rng(seed)
    shape = (num_users, num_orus, n_rx, n_tx)
    g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    h = np.sqrt(beta)[:, :, None, None] * g
    if noise_variance is None:
        dbm = noise_density_dbm_hz + noise_figure_db
        noise_variance = 10.0 ** (dbm / 10.0) * 1e-3 * bandwidth_hz
    return ChannelSet(h, noise_variance, bandwidth_hz)


def channels_for(cfg: NetworkConfig, *, channel_seed: int | None = None
                 ) -> tuple[Topology, LargeScaleFading, ChannelSet]:
    """Convenience: build the full (topology, fading, channels) triple from config."""
    topo = generate_topology(cfg.topology_seed, cfg.num_orus, cfg.num_users,
                             cfg.area_side_m, n_tx=cfg.n_tx, n_rx=cfg.n_rx,
                             n_streams=cfg.n_streams)
    fading = compute_large_scale_fading(topo, cfg.pathloss)
    seed = cfg.channel_seed if channel_seed is None else channel_seed
    chans = draw_channels(fading, seed, n_rx=cfg.n_rx, n_tx=cfg.n_tx,
                          noise_variance=cfg.noise_variance_w,
                          bandwidth_hz=cfg.bandwidth_hz)
    return topo, fading, chans


def associate_users(fading: LargeScaleFading, z: np.ndarray,
                    l_max: int) -> Association:
    """Serve each user by its up-to-l_max strongest ACTIVE O-RUs.

    Ties break toward the lower O-RU index. All-inactive z yields empty
    serving sets (rates will simply be zero).
    """
    beta = fading.beta
    num_users, num_orus = beta.shape
    z = np.asarray(z)
    if z.shape != (num_orus,):
        raise ValueError(f"activation vector must have length {num_orus}")
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    active = [l for l in range(num_orus) if z[l]]
    serving: list[tuple[int, ...]] = []
    served: list[list[int]] = [[] for _ in range(num_orus)]
    for k in range(num_users):
        ranked = sorted(active, key=lambda l: (-beta[k, l], l))[:l_max]
        serving.append(tuple(ranked))
        for l in ranked:
            served[l].append(k)
    return Association(tuple(serving), tuple(tuple(s) for s in served), l_max)
