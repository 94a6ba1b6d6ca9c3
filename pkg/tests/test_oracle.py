"""Brute-force references cross-checked against independent enumeration."""

from itertools import combinations, product

import numpy as np
import pytest

from coopsim.channel import NetConfig, build_allocation, compute_rates, link_gains
from coopsim.oracle import (
    OracleGuardError,
    RsuSnapshot,
    all_pairings,
    block_contributions,
    oracle_blocks,
    oracle_rsu,
)
from coopsim.quadtree import candidate_cap
from coopsim.sensing import S_FREE, S_OCC
from coopsim.world import Junction

from helpers import block, world_cfg


def enum_best(candidates, interest, budget, cell_m, mu, now):
    """Reference: scan every subset of size <= budget, lex-smallest winner."""
    contrib = block_contributions(candidates, interest, cell_m, mu, now)
    real = [i for i, b in enumerate(candidates) if b is not None]
    best_val, best_idx = 0.0, ()
    for r in range(min(budget, len(real)) + 1):
        for subset in combinations(real, r):
            v = contrib[list(subset)].sum() if subset else 0.0
            if v > best_val + 1e-12:
                best_val, best_idx = v, subset
            elif abs(v - best_val) <= 1e-12 and subset < best_idx:
                best_idx = subset
    bits = np.zeros(len(candidates), dtype=np.int64)
    bits[list(best_idx)] = 1
    return bits, best_val


def random_instance(rng, n_cands=9):
    cands = []
    for i in range(n_cands):
        if rng.random() < 0.25:
            cands.append(None)
        else:
            side = int(rng.choice([1, 2, 4]))
            ox = int(rng.integers(0, 16 - side))
            oy = int(rng.integers(0, 16 - side))
            cands.append(block(origin=(ox, oy), side=side,
                               state=int(rng.choice([S_OCC, S_FREE])),
                               gamma=float(rng.uniform(0, 3)),
                               p=float(rng.uniform(0.5, 1.0))))
    interest = rng.uniform(0, 1, size=(16, 16)) * (rng.random((16, 16)) < 0.7)
    return cands, interest


class TestOracleBlocks:
    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(21)
        for trial in range(30):
            cands, interest = random_instance(rng)
            budget = int(rng.integers(0, 6))
            got_bits, got_val = oracle_blocks(cands, interest, budget, 4.0,
                                              0.9, 5.0)
            ref_bits, ref_val = enum_best(cands, interest, budget, 4.0, 0.9, 5.0)
            assert got_val == pytest.approx(ref_val, abs=1e-12), f"trial {trial}"
            np.testing.assert_array_equal(got_bits, ref_bits, err_msg=f"trial {trial}")

    def test_budget_zero_sends_nothing(self):
        cands = [block(origin=(0, 0)), block(origin=(1, 0))]
        bits, val = oracle_blocks(cands, np.ones((4, 4)), 0, 4.0, 0.9, 0.0)
        assert not bits.any() and val == 0.0

    def test_negative_budget_clamped(self):
        bits, val = oracle_blocks([block()], np.ones((4, 4)), -3, 4.0, 0.9, 0.0)
        assert not bits.any() and val == 0.0

    def test_slack_budget_takes_low_index_padding(self):
        # block 0 contributes nothing but the spare slot admits it anyway
        cands = [block(origin=(0, 0)), block(origin=(1, 0))]
        interest = np.zeros((4, 4))
        interest[1, 0] = 1.0  # cell (x=1, y=0): inside block 1 only
        bits, val = oracle_blocks(cands, interest, 2, 4.0, 0.9, 0.0)
        np.testing.assert_array_equal(bits, [1, 1])
        assert val == pytest.approx(1.0 / 16.0)

    def test_generous_budget_selects_everything_real(self):
        rng = np.random.default_rng(3)
        cands, interest = random_instance(rng)
        bits, _ = oracle_blocks(cands, interest, len(cands), 4.0, 0.9, 5.0)
        np.testing.assert_array_equal(
            bits, [1 if b is not None else 0 for b in cands])

    def test_candidate_guard(self):
        cands = [block(origin=(i, 0)) for i in range(23)]
        with pytest.raises(OracleGuardError, match="23 candidates"):
            oracle_blocks(cands, np.ones((32, 32)), 4, 4.0, 0.9, 0.0)
        # explicit limit override admits the same list
        oracle_blocks(cands, np.ones((32, 32)), 4, 4.0, 0.9, 0.0,
                      max_candidates=23)


class TestAllPairings:
    @pytest.mark.parametrize("n,count", [(2, 1), (4, 3)])
    def test_counts(self, n, count):
        seen = {tuple(sorted(tuple(sorted(p)) for p in m))
                for m in all_pairings(n)}
        assert len(seen) == count


def rsu_instance(n, k, seed=0, levels=2):
    cfg = world_cfg()
    junction = Junction(cfg)
    rng = np.random.default_rng(seed)
    # vehicles on lane coordinates near the junction, all present
    w = junction.box[2] - junction.box[0]
    spots = [(40.0, 64.0 - w / 4), (90.0, 64.0 + w / 4),
             (64.0 + w / 4, 38.0), (64.0 - w / 4, 95.0)]
    positions = np.array(spots[:n])
    present = np.ones(n, dtype=bool)
    side = 2 ** levels
    cands, interest = [], []
    for i in range(n):
        row = []
        for _ in range(candidate_cap(levels)):
            ox = int(rng.integers(0, cfg.extent_m / cfg.cell_m - 1))
            oy = int(rng.integers(0, cfg.extent_m / cfg.cell_m - 1))
            row.append(block(origin=(ox, oy), side=1,
                             state=int(rng.choice([S_OCC, S_FREE])),
                             gamma=float(rng.uniform(0, 2)),
                             p=float(rng.uniform(0.6, 1.0))))
        if rng.random() < 0.5:
            row[0] = None
        cands.append(row)
        interest.append(rng.uniform(0, 1, size=(32, 32)))
    del side
    snap = RsuSnapshot(positions=positions, present=present, candidates=cands,
                       interest=interest, now=3.0, mu=0.9, cell_m=cfg.cell_m,
                       slot_s=cfg.slot_s)
    net = NetConfig(n_rb=k, tx_power_dbm=-40.0, fading=False)
    return snap, junction, net


def score_choice(snap, junction, net, pairs, rbs):
    """Objective for one (pairing, RB) choice, recomputed from parts."""
    n = snap.positions.shape[0]
    gains = link_gains(snap.positions, snap.present, junction, net,
                       np.random.default_rng(0))
    assoc, alloc = build_allocation(pairs, rbs, n, net.n_rb)
    rates, _ = compute_rates(assoc, alloc, gains, net, snap.slot_s)
    total = 0.0
    for a, b in pairs:
        fs = []
        for s, r in ((a, b), (b, a)):
            budget = int(np.floor(rates[s, r] + 1e-9))
            _, f = oracle_blocks(snap.candidates[s], snap.interest[r], budget,
                                 snap.cell_m, snap.mu, snap.now)
            fs.append(f)
        total += fs[0] * fs[1]
    return total


class TestOracleRsu:
    def test_two_vehicle_choice_matches_scan(self):
        snap, junction, net = rsu_instance(2, 3, seed=5)
        pairs, rbs, value = oracle_rsu(snap, junction, net)
        assert pairs == [(0, 1)]
        best = max(score_choice(snap, junction, net, [(0, 1)], [rb])
                   for rb in product(range(net.n_rb), repeat=2) if rb[0] != rb[1])
        assert value == pytest.approx(best, rel=1e-12)
        assert value == pytest.approx(
            score_choice(snap, junction, net, pairs, rbs), rel=1e-12)

    def test_four_vehicle_exhaustive_agreement(self):
        snap, junction, net = rsu_instance(4, 3, seed=9)
        pairs, rbs, value = oracle_rsu(snap, junction, net)
        combos = [(0, 1), (0, 2), (1, 2)]
        best = -1.0
        scanned = 0
        for matching in all_pairings(4):
            for choice in product(combos, repeat=2):
                rb_assign = [c if m == (min(m), max(m)) else (c[1], c[0])
                             for c, m in zip(choice, matching)]
                best = max(best, score_choice(snap, junction, net, matching,
                                              rb_assign))
                scanned += 1
        assert scanned == 27
        assert value == pytest.approx(best, rel=1e-12)
        assert value == pytest.approx(
            score_choice(snap, junction, net, pairs, rbs), rel=1e-12)
        assert value > 0.0

    def test_guard_on_size(self):
        snap, junction, net = rsu_instance(4, 3)
        snap.positions = np.vstack([snap.positions, snap.positions[:2]])
        snap.present = np.ones(6, dtype=bool)
        with pytest.raises(OracleGuardError):
            oracle_rsu(snap, junction, net)

    def test_fading_forced_off(self):
        snap, junction, net = rsu_instance(2, 2, seed=1)
        fading_net = NetConfig(**{**net.__dict__, "fading": True})
        p1, r1, v1 = oracle_rsu(snap, junction, fading_net)
        p2, r2, v2 = oracle_rsu(snap, junction, net)
        assert (p1, r1, v1) == (p2, r2, v2)
