"""Sensor model: probability mapping, value decay, rays/occlusion, map fusion."""

import numpy as np
import pytest

from coopsim.sensing import (S_FREE, S_OCC, S_UNK, VehicleMap, cell_value,
                             modified_interest, occupancy_probability, sense)
from helpers import vehicle, world_cfg


def test_occupancy_probability_values():
    assert occupancy_probability(S_OCC, 0.9) == pytest.approx(0.9, abs=1e-12)
    assert occupancy_probability(S_UNK, 0.7) == 0.5
    assert occupancy_probability(S_FREE, 1.0) == pytest.approx(0.0, abs=1e-12)
    # vectorized form agrees elementwise
    st = np.array([S_OCC, S_FREE, S_UNK])
    np.testing.assert_allclose(occupancy_probability(st, 0.8), [0.8, 0.2, 0.5])


def test_cell_value_decay():
    assert cell_value(0.5, 3.0, 0.9) == 0.0
    assert cell_value(1.0, 0.0, 0.9) == 1.0
    assert cell_value(1.0, 2.0, 0.9) == pytest.approx(0.81, abs=1e-12)
    assert cell_value(0.0, 1.0, 0.9) == pytest.approx(0.9, abs=1e-12)
    # symmetric in p around 1/2
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 1, 200)
    d = rng.uniform(0, 10, 200)
    np.testing.assert_allclose(cell_value(p, d, 0.9), cell_value(1 - p, d, 0.9),
                               atol=1e-12)


def test_modified_interest():
    assert modified_interest(1.0, 1.0) == 0.0
    assert modified_interest(0.0, 0.0) == 0.0
    assert modified_interest(0.5, 0.19) == pytest.approx(0.405, abs=1e-12)


class TestSense:
    """Ray-cast sensing over the vehicle's square, centered on its cell."""

    def setup_method(self):
        self.cfg = world_cfg()
        self.empty = np.zeros((self.cfg.cells, self.cfg.cells), dtype=bool)
        self.rng = np.random.default_rng(1)

    def test_empty_world_reads_free(self):
        v = vehicle(pos=(66.0, 66.0), v=10.0)  # cell (16, 16)
        g = sense(v, self.empty, None, self.cfg, levels=3, t=5, rng=self.rng)
        assert g.origin == (12, 12) and g.side == 8
        assert (g.state[g.sensed] == S_FREE).all()
        assert (g.state[~g.sensed] == S_UNK).all()
        np.testing.assert_allclose(g.gamma[g.sensed], 5 * self.cfg.slot_s)
        # square corners lie outside the inscribed sensing circle
        assert not g.sensed[0, 0] and not g.sensed[7, 7]
        assert g.sensed[4, 4]

    def test_sensed_only_within_radius(self):
        v = vehicle(pos=(66.0, 66.0), v=10.0, sensing_radius=16.0)
        g = sense(v, self.empty, None, self.cfg, 3, 0, self.rng)
        lx, ly = np.nonzero(g.sensed)
        cx = (lx + g.origin[0] + 0.5) * self.cfg.cell_m
        cy = (ly + g.origin[1] + 0.5) * self.cfg.cell_m
        d = np.hypot(cx - 66.0, cy - 66.0)
        assert (d <= 16.0).all()

    def test_visible_obstacle_reads_occupied(self):
        occ = self.empty.copy()
        occ[18, 16] = True
        v = vehicle(pos=(66.0, 66.0))
        g = sense(v, occ, None, self.cfg, 3, 0, self.rng)
        assert g.state[18 - 12, 16 - 12] == S_OCC

    def test_occlusion_behind_obstacle(self):
        occ = self.empty.copy()
        occ[18, 16] = True  # wall two cells east of the sensor
        v = vehicle(pos=(66.0, 66.0))
        g = sense(v, occ, None, self.cfg, 3, 0, self.rng)
        assert not g.sensed[19 - 12, 16 - 12]
        assert g.state[19 - 12, 16 - 12] == S_UNK

    def test_own_footprint_does_not_occlude(self):
        occ = self.empty.copy()
        own = (np.array([16, 17]), np.array([16, 16]))
        occ[own] = True
        v = vehicle(pos=(66.0, 66.0))
        g = sense(v, occ, own, self.cfg, 3, 0, self.rng)
        # the cell east of the footprint is visible and reads free
        assert g.sensed[19 - 12, 16 - 12]
        assert g.state[19 - 12, 16 - 12] == S_FREE
        # the footprint itself still reads occupied
        assert g.state[17 - 12, 16 - 12] == S_OCC

    def test_perfect_sensor_never_flips(self):
        v = vehicle(pos=(66.0, 66.0), reliability=1.0)
        for t in range(20):
            g = sense(v, self.empty, None, self.cfg, 3, t, self.rng)
            assert (g.state[g.sensed] == S_FREE).all()

    def test_noise_rate_matches_reliability(self):
        v = vehicle(pos=(66.0, 66.0), reliability=0.8)
        flips = total = 0
        for t in range(60):
            g = sense(v, self.empty, None, self.cfg, 3, t, self.rng)
            flips += int((g.state[g.sensed] == S_OCC).sum())
            total += int(g.sensed.sum())
        rate = flips / total
        sigma = np.sqrt(0.2 * 0.8 / total)
        assert abs(rate - 0.2) < 5 * sigma


class TestVehicleMap:
    def setup_method(self):
        self.cfg = world_cfg()

    def test_integrate_overwrites_only_sensed(self):
        m = VehicleMap(self.cfg, owner=0)
        occ = np.zeros((self.cfg.cells,) * 2, dtype=bool)
        occ[18, 16] = True
        v = vehicle(pos=(66.0, 66.0))
        g = sense(v, occ, None, self.cfg, 3, t=10, rng=np.random.default_rng(0))
        m.integrate(g, reliability=1.0)
        assert m.state[18, 16] == S_OCC and m.p[18, 16] == 1.0
        assert m.gamma[18, 16] == pytest.approx(10 * self.cfg.slot_s)
        assert m.state[0, 0] == S_UNK and m.p[0, 0] == 0.5  # untouched far cell

    def test_value_map_decay_and_unknowns(self):
        m = VehicleMap(self.cfg, owner=0)
        m.p[4, 4], m.gamma[4, 4] = 1.0, 0.0
        q = m.value_map(now=1.0, mu=0.9)
        assert q[4, 4] == pytest.approx(0.9)
        assert q[10, 10] == 0.0  # never sensed -> p = 1/2

    def test_fuse_block_adopts_only_on_better_value(self):
        m = VehicleMap(self.cfg, owner=0)
        n = m.fuse_block((2, 2), 2, S_OCC, p=1.0, gamma=0.0, now=1.0, mu=0.9)
        assert n == 4  # unknown cells (q=0) always lose to q=0.9
        assert (m.state[2:4, 2:4] == S_OCC).all()
        # a weaker incoming block (q=0.5 < 0.9) overwrites nothing
        n = m.fuse_block((2, 2), 2, S_FREE, p=0.75, gamma=1.0, now=1.0, mu=0.9)
        assert n == 0 and (m.state[2:4, 2:4] == S_OCC).all()
        # but a fresher one wins again
        n = m.fuse_block((2, 2), 2, S_FREE, p=0.0, gamma=1.0, now=1.0, mu=0.9)
        assert n == 4 and (m.state[2:4, 2:4] == S_FREE).all()

    def test_fuse_block_clips_to_world(self):
        m = VehicleMap(self.cfg, owner=0)
        n = m.fuse_block((-1, -1), 2, S_OCC, p=1.0, gamma=0.0, now=0.0, mu=0.9)
        assert n == 1 and m.state[0, 0] == S_OCC
        assert m.fuse_block((-5, -5), 2, S_OCC, 1.0, 0.0, 0.0, 0.9) == 0

    def test_interest_zero_where_fresh(self):
        """Freshly sensed cells carry no interest; unseen cells in the cone do."""
        cfg = self.cfg
        m = VehicleMap(cfg, owner=0)
        v = vehicle(pos=(30.0, 66.0), v=15.0, heading=0.0, sensing_radius=16.0)
        occ = np.zeros((cfg.cells,) * 2, dtype=bool)
        g = sense(v, occ, None, cfg, 3, t=0, rng=np.random.default_rng(0))
        m.integrate(g, reliability=1.0)
        im = m.interest_map(v, t_int=2.0, mu=0.9, now=0.0)
        assert im[8, 16] == 0.0        # sensed dead ahead (d=4): w>0 but q=1
        assert im[12, 16] > 0.0        # ahead at 20 m: outside radius, unseen
        assert (im >= 0).all()

    def test_interest_zero_when_parked(self):
        m = VehicleMap(self.cfg, owner=0)
        v = vehicle(pos=(66.0, 66.0), v=0.0)
        assert not m.interest_map(v, 2.0, 0.9, now=0.0).any()
