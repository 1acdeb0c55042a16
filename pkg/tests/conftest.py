import numpy as np
import pytest

from cforan import net_model
from cforan.config import NetworkConfig, PathlossParams
from cforan.precoder import UtilitySpec


def random_instance(seed, num_users=3, num_orus=4, n_tx=4, n_rx=2, n_streams=2,
                    l_max=None, r_min=0.0, area=500.0):
    """Small random world for solver tests: (channels, assoc, spec, z)."""
    cfg = NetworkConfig(
        num_orus=num_orus, num_users=num_users, area_side_m=area,
        n_tx=n_tx, n_rx=n_rx, n_streams=n_streams,
        l_max=l_max or num_orus, topology_seed=seed, channel_seed=seed + 1,
        pathloss=PathlossParams(),
    )
    topo, fading, chans = net_model.channels_for(cfg)
    z = np.ones(num_orus)
    assoc = net_model.associate_users(fading, z, cfg.l_max)
    spec = UtilitySpec(kind="sum_rate", r_min_mbps=np.full(num_users, r_min),
                       p_max_w=cfg.p_max_w)
    return chans, assoc, spec, z


@pytest.fixture
def rng():
    return np.random.default_rng(0)
