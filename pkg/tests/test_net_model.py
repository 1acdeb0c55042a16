import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cforan import net_model
from cforan.config import PathlossParams


class TestTopology:
    def test_reference_scale(self):
        topo = net_model.generate_topology(7, 50, 20, 500.0)
        assert topo.num_orus == 50
        assert topo.num_users == 20
        assert np.all(topo.oru_positions >= 0) and np.all(topo.oru_positions <= 500)
        assert np.all(topo.user_positions >= 0) and np.all(topo.user_positions <= 500)

    def test_deterministic(self):
        a = net_model.generate_topology(7, 50, 20, 500.0)
        b = net_model.generate_topology(7, 50, 20, 500.0)
        assert np.array_equal(a.oru_positions, b.oru_positions)
        assert np.array_equal(a.user_positions, b.user_positions)

    def test_tiny_bounds(self):
        topo = net_model.generate_topology(1, 1, 1, 10.0)
        assert np.all(topo.oru_positions >= 0) and np.all(topo.oru_positions <= 10)
        assert np.all(topo.user_positions >= 0) and np.all(topo.user_positions <= 10)

    @pytest.mark.parametrize("l,k,area", [(0, 1, 10.0), (1, 0, 10.0), (1, 1, 0.0)])
    def test_invalid_arguments(self, l, k, area):
        with pytest.raises(ValueError):
            net_model.generate_topology(0, l, k, area)

    def test_stream_count_checked(self):
        with pytest.raises(ValueError):
            net_model.Topology(np.zeros((1, 2)), np.zeros((1, 2)), 10.0,
                               n_tx=2, n_rx=2, n_streams=3)


class TestFading:
    def test_equidistant_users_equal_beta(self):
        topo = net_model.Topology(
            oru_positions=np.array([[50.0, 50.0]]),
            user_positions=np.array([[30.0, 50.0], [70.0, 50.0]]),
            area_side_m=100.0)
        fading = net_model.compute_large_scale_fading(topo)
        assert fading.beta[0, 0] == pytest.approx(fading.beta[1, 0], rel=1e-12)

    def test_distance_doubling_ratio(self):
        # PL exponent 3.8, shadowing off: beta(2d)/beta(d) = 2^-3.8
        topo = net_model.Topology(
            oru_positions=np.array([[0.0, 0.0]]),
            user_positions=np.array([[10.0, 0.0], [20.0, 0.0]]),
            area_side_m=100.0)
        fading = net_model.compute_large_scale_fading(
            topo, PathlossParams(exponent=3.8, shadowing_sigma_db=0.0))
        assert fading.beta[1, 0] / fading.beta[0, 0] == pytest.approx(2 ** -3.8, rel=1e-12)

    def test_d_min_clamp(self):
        topo = net_model.Topology(
            oru_positions=np.array([[5.0, 5.0]]),
            user_positions=np.array([[5.0, 5.0], [5.0, 5.5]]),
            area_side_m=10.0)
        p = PathlossParams(pl0_db=30.0, d_min_m=1.0)
        fading = net_model.compute_large_scale_fading(topo, p)
        assert np.allclose(fading.beta, 10 ** (-30.0 / 10.0))

    def test_monotone_in_distance_without_shadowing(self):
        topo = net_model.generate_topology(3, 5, 12, 300.0)
        fading = net_model.compute_large_scale_fading(topo)
        d = np.linalg.norm(topo.user_positions[:, None] - topo.oru_positions[None],
                           axis=-1).ravel()
        b = fading.beta.ravel()
        order = np.argsort(d)
        assert np.all(np.diff(b[order]) <= 1e-18)

    def test_shadowing_is_seeded(self):
        topo = net_model.generate_topology(3, 4, 4, 300.0)
        p = PathlossParams(shadowing_sigma_db=8.0, shadowing_seed=11)
        a = net_model.compute_large_scale_fading(topo, p)
        b = net_model.compute_large_scale_fading(topo, p)
        assert np.array_equal(a.beta, b.beta)


class TestChannels:
    def test_unit_variance_when_beta_one(self):
        fading = net_model.LargeScaleFading(np.ones((1, 1)))
        chans = net_model.draw_channels(fading, 0, n_rx=50, n_tx=50)
        var = np.mean(np.abs(chans.H) ** 2)
        assert var == pytest.approx(1.0, rel=0.05)

    def test_sample_variance_tracks_beta(self):
        beta = np.array([[0.3]])
        fading = net_model.LargeScaleFading(beta)
        draws = [net_model.draw_channels(fading, s, n_rx=1, n_tx=1).H[0, 0, 0, 0]
                 for s in range(10_000)]
        var = np.mean(np.abs(draws) ** 2)
        assert var == pytest.approx(0.3, rel=0.05)

    def test_seed_reproducibility(self):
        fading = net_model.LargeScaleFading(np.full((3, 4), 0.5))
        a = net_model.draw_channels(fading, 42)
        b = net_model.draw_channels(fading, 42)
        assert np.array_equal(a.H, b.H)

    def test_default_noise_budget(self):
        # -174 dBm/Hz + 9 dB NF over 20 MHz
        fading = net_model.LargeScaleFading(np.ones((1, 1)))
        chans = net_model.draw_channels(fading, 0)
        expect = 10 ** ((-174 + 9) / 10) * 1e-3 * 20e6
        assert chans.noise_variance == pytest.approx(expect, rel=1e-12)


class TestAssociation:
    def test_all_active_sorted(self):
        fading = net_model.LargeScaleFading(np.array([[0.1, 0.9, 0.5]]))
        assoc = net_model.associate_users(fading, np.ones(3), l_max=3)
        assert assoc.serving_sets[0] == (1, 2, 0)

    def test_top_two(self):
        fading = net_model.LargeScaleFading(np.array([[0.1, 0.9, 0.5]]))
        assoc = net_model.associate_users(fading, np.ones(3), l_max=2)
        assert assoc.serving_sets[0] == (1, 2)

    def test_inactive_filtered_then_sorted(self):
        fading = net_model.LargeScaleFading(np.array([[0.1, 0.9, 0.5]]))
        assoc = net_model.associate_users(fading, np.array([1, 0, 1]), l_max=2)
        assert assoc.serving_sets[0] == (2, 0)

    def test_tie_breaks_to_lower_index(self):
        fading = net_model.LargeScaleFading(np.array([[0.5, 0.5, 0.5]]))
        assoc = net_model.associate_users(fading, np.ones(3), l_max=2)
        assert assoc.serving_sets[0] == (0, 1)

    def test_all_inactive_gives_empty_sets(self):
        fading = net_model.LargeScaleFading(np.full((2, 3), 0.5))
        assoc = net_model.associate_users(fading, np.zeros(3), l_max=2)
        assert all(s == () for s in assoc.serving_sets)

    @given(seed=st.integers(0, 10_000), k=st.integers(1, 6), l=st.integers(1, 8),
           l_max=st.integers(1, 8), data=st.data())
    @settings(max_examples=60, deadline=None)
    def test_bidirectional_and_monotone(self, seed, k, l, l_max, data):
        rng = np.random.default_rng(seed)
        beta = rng.uniform(1e-12, 1.0, size=(k, l))
        fading = net_model.LargeScaleFading(beta)
        z = np.array(data.draw(st.lists(st.integers(0, 1), min_size=l, max_size=l)))
        assoc = net_model.associate_users(fading, z, l_max)
        # bidirectionality
        for kk in range(k):
            for ll in assoc.serving_sets[kk]:
                assert kk in assoc.served_sets[ll]
        for ll in range(l):
            for kk in assoc.served_sets[ll]:
                assert ll in assoc.serving_sets[kk]
        # inactive O-RUs never serve
        for ll in range(l):
            if not z[ll]:
                assert assoc.served_sets[ll] == ()
        # deactivating one O-RU never adds it anywhere
        if z.sum() > 0:
            drop = int(np.flatnonzero(z)[0])
            z2 = z.copy()
            z2[drop] = 0
            assoc2 = net_model.associate_users(fading, z2, l_max)
            for kk in range(k):
                assert drop not in assoc2.serving_sets[kk]
