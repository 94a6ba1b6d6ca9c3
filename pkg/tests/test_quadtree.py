"""Quadtree decomposition, block values, and the transmit inventory."""

import json

import numpy as np
import pytest

from coopsim.quadtree import (BlockInventory, block_state, block_value,
                              build_quadtree, candidate_cap, decompress,
                              dump_tree, render_ascii)
from coopsim.sensing import S_FREE, S_OCC, S_UNK
from helpers import block, grid_from


def test_candidate_cap():
    assert [candidate_cap(l) for l in (1, 2, 3, 4, 5)] == [1, 5, 21, 85, 341]


class TestBlockState:
    def test_one_occupied_dominates(self):
        c = np.full((4, 4), S_FREE, dtype=np.int8)
        c[2, 1] = S_OCC
        assert block_state(c) == S_OCC

    def test_all_free(self):
        assert block_state(np.full((4, 4), S_FREE, dtype=np.int8)) == S_FREE

    def test_free_unknown_mix(self):
        c = np.full((2, 2), S_FREE, dtype=np.int8)
        c[0, 0] = S_UNK
        assert block_state(c) == S_UNK

    def test_random_sweep_against_direct_rule(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            c = rng.choice([S_OCC, S_FREE, S_UNK], size=(4, 4)).astype(np.int8)
            if (c == S_OCC).any():
                want = S_OCC
            elif (c == S_FREE).all():
                want = S_FREE
            else:
                want = S_UNK
            assert block_state(c) == want


def test_block_value_goldens():
    assert block_value(block(state=S_UNK, p=0.5), 0.9, now=5.0) == 0.0
    assert block_value(block(state=S_OCC, p=1.0, gamma=2.0), 0.9, now=2.0) == 1.0
    b = block(state=S_FREE, p=0.0, gamma=0.0)
    assert block_value(b, 0.9, now=1.0) == pytest.approx(0.9, abs=1e-12)


class TestBuild:
    def test_uniform_square_is_one_block(self):
        g = grid_from(np.full((4, 4), S_FREE))
        leaves, nodes = build_quadtree(g, levels=2, reliability=1.0)
        assert len(leaves) == 1 and len(nodes) == 1
        assert leaves[0].level == 0 and leaves[0].side == 4
        assert leaves[0].state == S_FREE and leaves[0].p == 0.0

    def test_checkerboard_hits_candidate_cap(self):
        g = grid_from(np.indices((4, 4)).sum(axis=0) % 2)
        leaves, nodes = build_quadtree(g, 2, 1.0)
        assert len(nodes) == candidate_cap(2) == 5
        assert len(leaves) == 16

    def test_nodes_are_breadth_first(self):
        rng = np.random.default_rng(5)
        g = grid_from(rng.choice([S_OCC, S_FREE, S_UNK], size=(8, 8)))
        _, nodes = build_quadtree(g, 3, 1.0)
        levels = [b.level for b in nodes]
        assert levels == sorted(levels)
        assert nodes[0].level == 0 and nodes[0].side == 8

    def test_mismatched_side_rejected(self):
        with pytest.raises(ValueError):
            build_quadtree(grid_from(np.zeros((4, 4))), levels=3, reliability=1.0)

    def test_origin_carried_through(self):
        g = grid_from(np.full((4, 4), S_OCC), origin=(-3, 7))
        leaves, nodes = build_quadtree(g, 2, 1.0)
        assert leaves[0].origin == (-3, 7)
        assert np.array_equal(decompress(leaves, 2, (-3, 7)), g.state)

    def test_losslessness_sweep(self):
        """decompose -> recompose is exact; leaves tile the square exactly once."""
        rng = np.random.default_rng(11)
        for trial in range(200):
            lv = int(rng.integers(1, 6))
            side = 2 ** lv
            arr = rng.choice([S_OCC, S_FREE, S_UNK], size=(side, side))
            g = grid_from(arr)
            leaves, nodes = build_quadtree(g, lv, 1.0)
            assert np.array_equal(decompress(leaves, lv, (0, 0)), arr)
            assert sum(b.side ** 2 for b in leaves) == side * side
            assert len(nodes) <= candidate_cap(lv)
            for b in nodes:
                assert b.level < lv

    def test_parent_state_consistent_with_children(self):
        rng = np.random.default_rng(13)
        g = grid_from(rng.choice([S_OCC, S_FREE, S_UNK], size=(8, 8)))
        _, nodes = build_quadtree(g, 3, 1.0)
        by_key = {(b.origin, b.side): b for b in nodes}
        for b in nodes:
            if b.side == 1:
                continue
            h = b.side // 2
            kids = [by_key.get(((b.origin[0] + dx, b.origin[1] + dy), h))
                    for dx in (0, h) for dy in (0, h)]
            kids = [k for k in kids if k is not None]
            if len(kids) < 4:
                continue  # only subdivided regions list all children
            states = [k.state for k in kids]
            if S_OCC in states:
                assert b.state == S_OCC
            elif all(s == S_FREE for s in states):
                assert b.state == S_FREE


def test_dump_and_render():
    arr = np.full((4, 4), S_FREE)
    arr[0, 0] = S_OCC
    leaves, nodes = build_quadtree(grid_from(arr), 2, 1.0)
    rows = json.loads(dump_tree(nodes, (0, 0)))
    assert rows[0] == {"level": 0, "x": 0, "y": 0, "side": 4, "state": "#"}
    pic = render_ascii(leaves, 2, (0, 0))
    assert pic.count("#") == 1 and pic.count(".") == 15


class TestInventory:
    def test_width(self):
        assert BlockInventory(levels=2, max_past=10).width == 15
        assert BlockInventory(levels=3, max_past=0).width == 21

    def test_oldest_evicted_first(self):
        inv = BlockInventory(levels=2, max_past=4)
        blocks = [block(origin=(i, 0), gamma=float(i)) for i in range(5)]
        inv.apply_received(blocks, now=5.0)
        assert len(inv.b_p) == 4
        assert min(b.gamma for b in inv.b_p) == 1.0  # gamma=0 went first

    def test_gamma_tie_breaks_on_value_then_order(self):
        inv = BlockInventory(levels=2, max_past=2, mu=0.9)
        weak = block(origin=(0, 0), gamma=1.0, p=0.6)   # low value
        strong = block(origin=(1, 0), gamma=1.0, p=1.0)
        mid = block(origin=(2, 0), gamma=1.0, p=0.8)
        inv.apply_received([weak, strong, mid], now=1.0)
        assert weak not in inv.b_p
        assert strong in inv.b_p and mid in inv.b_p

    def test_duplicate_regions_coexist(self):
        inv = BlockInventory(levels=2, max_past=4)
        inv.apply_received([block(origin=(0, 0), gamma=0.0),
                            block(origin=(0, 0), gamma=1.0)], now=1.0)
        assert len(inv.b_p) == 2

    def test_empty_receive_is_noop(self):
        inv = BlockInventory(levels=2, max_past=4)
        inv.apply_received([block()], now=0.0)
        before = list(inv.b_p)
        inv.apply_received([], now=1.0)
        assert inv.b_p == before

    def test_candidate_layout(self):
        """Current blocks lead in tree order; past follow newest-first; padding."""
        inv = BlockInventory(levels=2, max_past=3)
        cur = [block(origin=(i, i), gamma=9.0) for i in range(2)]
        inv.refresh_current(cur)
        old = block(origin=(5, 0), gamma=1.0)
        new = block(origin=(6, 0), gamma=2.0)
        inv.apply_received([old, new], now=2.0)
        cands = inv.candidates()
        assert len(cands) == 8
        assert cands[0] is cur[0] and cands[1] is cur[1]
        assert cands[2] is new and cands[3] is old
        assert cands[4:] == [None] * 4

    def test_same_gamma_newest_insertion_first(self):
        inv = BlockInventory(levels=2, max_past=4)
        a = block(origin=(1, 0), gamma=3.0)
        b = block(origin=(2, 0), gamma=3.0)
        inv.apply_received([a], now=3.0)
        inv.apply_received([b], now=3.0)
        cands = [c for c in inv.candidates() if c is not None]
        assert cands[0] is b and cands[1] is a
