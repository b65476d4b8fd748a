import math

import numpy as np
import pytest
from scipy.special import expit, logit

from conftest import random_grid
from oracles import brute_force_min_cut
from voxedit import (
    AttentionGrid,
    FeatureGrid,
    VoxelMask,
    build_graph,
    label_probabilities,
    merge,
    min_cut,
    segment,
)
from voxedit.segmentation import SegConfig, SegGraph, cut_cost


def attention_pair(n, edit_vals, obj_vals, density=1.0):
    scene = FeatureGrid.filled(n, density=density)
    a_e = AttentionGrid.from_feature_grid(scene)
    a_o = AttentionGrid.from_feature_grid(scene)
    a_e.features[..., 1] = edit_vals
    a_o.features[..., 1] = obj_vals
    return scene, a_e, a_o


class TestLabelProbabilities:
    def test_equal_attention_gives_half(self):
        _, a_e, a_o = attention_pair(2, 0.7, 0.7)
        p_e, p_o = label_probabilities(a_e, a_o)
        np.testing.assert_allclose(p_e, 0.5)
        np.testing.assert_allclose(p_o, 0.5)

    def test_unit_gap(self):
        _, a_e, a_o = attention_pair(2, 1.0, 0.0)
        p_e, _ = label_probabilities(a_e, a_o)
        np.testing.assert_allclose(p_e, 0.7310585786300049, atol=1e-9)

    def test_large_negative_gap_stable(self):
        _, a_e, a_o = attention_pair(2, -25.0, 25.0)
        with np.errstate(over="raise"):
            p_e, p_o = label_probabilities(a_e, a_o)
        assert (p_e < 1e-20).all()
        assert np.isfinite(p_e).all() and np.isfinite(p_o).all()

    def test_probabilities_sum_to_one(self, rng):
        _, a_e, a_o = attention_pair(3, rng.normal(0, 4, (3, 3, 3)), rng.normal(0, 4, (3, 3, 3)))
        p_e, p_o = label_probabilities(a_e, a_o)
        np.testing.assert_allclose(p_e + p_o, 1.0, atol=1e-7)

    def test_monotone_in_gap(self):
        gaps = np.linspace(-5, 5, 21)
        _, a_e, a_o = attention_pair(3, 0.0, 0.0)
        probs = []
        for g in gaps:
            a_e.features[..., 1] = g
            probs.append(label_probabilities(a_e, a_o)[0][0, 0, 0])
        assert (np.diff(probs) > 0).all()

    def test_resolution_mismatch_raises(self):
        _, a_e, _ = attention_pair(2, 0, 0)
        _, _, a_o = attention_pair(3, 0, 0)
        with pytest.raises(ValueError):
            label_probabilities(a_e, a_o)


class TestBuildGraph:
    def test_identical_colors_get_full_capacity(self):
        grid = FeatureGrid.filled(2, density=1.0, color=0.3)
        p = np.full((2, 2, 2), 0.5)
        g = build_graph(grid, p, 1 - p, SegConfig(edit_seeds=1, obj_seeds=1))
        assert g.nodes.size == 8
        np.testing.assert_allclose(g.capacities, 5.0, atol=1e-12)

    def test_capacity_at_two_sigma_squared_is_inv_e(self):
        # Colors differing by ||dc||^2 = 2 sigma^2 give weight e^-1.
        cfg = SegConfig(sigma=0.1, smoothness_lambda=5.0, edit_seeds=1, obj_seeds=1)
        d = math.sqrt(2.0) * cfg.sigma
        grid = FeatureGrid.filled(2, density=1.0)
        grid.features[..., 1] = logit(0.5 - d / 2)
        grid.features[0, 0, 1, 1] = logit(0.5 + d / 2)  # voxel (x=1, y=0, z=0)
        p = np.full((2, 2, 2), 0.5)
        g = build_graph(grid, p, 1 - p, cfg)
        caps = {tuple(sorted(e)): c for e, c in zip(g.edges.tolist(), g.capacities)}
        idx = {int(v): i for i, v in enumerate(g.nodes)}
        # Edge between flat voxels 0 and 1 spans the constructed difference.
        # float32 feature storage rounds the constructed colors at ~1e-7
        cap_01 = caps[tuple(sorted((idx[0], idx[1])))]
        assert cap_01 == pytest.approx(5.0 * math.exp(-1.0), abs=1e-6)

    def test_below_threshold_voxels_excluded(self):
        grid = FeatureGrid.filled(2, density=-1.0)
        grid.features[0, 0, 0, 0] = 1.0
        grid.features[0, 0, 1, 0] = 1.0
        p = np.full((2, 2, 2), 0.5)
        g = build_graph(grid, p, 1 - p, SegConfig(edit_seeds=1, obj_seeds=1))
        assert set(g.nodes.tolist()) == {0, 1}
        assert g.edges.shape[0] == 1

    def test_seed_conflict_resolved_by_rank_tie_goes_to_edit(self):
        grid = FeatureGrid.filled(2, density=-1.0)
        for v in (0, 1, 2):
            grid.features.reshape(-1, 4)[v, 0] = 1.0
        p_e = np.zeros((2, 2, 2))
        p_e.reshape(-1)[[0, 1, 2]] = [0.9, 0.5, 0.1]
        g = build_graph(grid, p_e, 1 - p_e, SegConfig(edit_seeds=2, obj_seeds=2))
        # Node 1 ties (rank 1 on both sides) and must land on the edit side.
        assert set(g.source_seeds.tolist()) == {0, 1}
        assert set(g.sink_seeds.tolist()) == {2}

    def test_fewer_nodes_than_seeds_warns(self):
        grid = FeatureGrid.filled(2, density=1.0)
        p = np.full((2, 2, 2), 0.5)
        with pytest.warns(UserWarning, match="occupied"):
            build_graph(grid, p, 1 - p, SegConfig(edit_seeds=300, obj_seeds=200))

    def test_capacities_bounded_and_monotone_in_color_gap(self, rng):
        cfg = SegConfig(edit_seeds=1, obj_seeds=1)
        gaps = np.linspace(0, 3, 10)
        caps = []
        for gap in gaps:
            grid = FeatureGrid.filled(2, density=1.0, color=0.0)
            grid.features[0, 0, 1, 1:] = gap
            p = np.full((2, 2, 2), 0.5)
            g = build_graph(grid, p, 1 - p, cfg)
            idx = {int(v): i for i, v in enumerate(g.nodes)}
            pos = np.where(
                (np.sort(g.edges, axis=1) == sorted((idx[0], idx[1]))).all(axis=1)
            )[0][0]
            caps.append(g.capacities[pos])
        caps = np.array(caps)
        assert (caps > 0).all() and (caps <= cfg.smoothness_lambda).all()
        assert (np.diff(caps) < 0).all()


def manual_graph(n_nodes, edges, caps, source, sink, resolution=2, **kw):
    return SegGraph(
        resolution=resolution,
        nodes=np.arange(n_nodes, dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        capacities=np.asarray(caps, dtype=np.float64),
        source_seeds=np.asarray(source, dtype=np.int64),
        sink_seeds=np.asarray(sink, dtype=np.int64),
        **kw,
    )


class TestMinCut:
    def test_two_nodes_cut_pairwise_edge(self):
        g = manual_graph(2, [[0, 1]], [0.7], [0], [1])
        mask = min_cut(g)
        labels = mask.bits.reshape(-1)[:2]
        np.testing.assert_array_equal(labels, [1, 0])
        oracle_cost, _ = brute_force_min_cut(2, [[0, 1]], [0.7], [0], [1])
        assert cut_cost(g, labels) == pytest.approx(oracle_cost) == pytest.approx(0.7)

    def test_source_seeds_only_label_everything_edit(self):
        g = manual_graph(4, [[0, 1], [1, 2], [2, 3]], [1.0, 2.0, 3.0], [0], [])
        labels = min_cut(g).bits.reshape(-1)[:4]
        np.testing.assert_array_equal(labels, [1, 1, 1, 1])

    def test_empty_graph_gives_zero_mask(self):
        g = manual_graph(0, np.zeros((0, 2)), [], [], [])
        assert min_cut(g).bits.sum() == 0

    def test_random_instances_match_brute_force(self, rng):
        # 2 x 2 x 3 voxel block: 12 nodes, full 6-neighborhood, random
        # capacities and seeds; optimum checked by exhaustive enumeration.
        for trial in range(30):
            n_nodes = 12
            shape = (3, 2, 2)  # (z, y, x) of a resolution-4 grid corner
            ids = np.arange(n_nodes).reshape(shape)
            edges = []
            for axis in range(3):
                sl_a = [slice(None)] * 3
                sl_b = [slice(None)] * 3
                sl_a[axis] = slice(0, shape[axis] - 1)
                sl_b[axis] = slice(1, shape[axis])
                edges.extend(zip(ids[tuple(sl_a)].ravel(), ids[tuple(sl_b)].ravel()))
            caps = rng.uniform(0.05, 4.0, len(edges))
            perm = rng.permutation(n_nodes)
            n_src = int(rng.integers(1, 4))
            n_snk = int(rng.integers(1, 4))
            source, sink = perm[:n_src], perm[n_src : n_src + n_snk]

            g = manual_graph(n_nodes, edges, caps, source, sink, resolution=4)
            labels = min_cut(g).bits.reshape(-1)[g.nodes]
            got = cut_cost(g, labels)
            want, _ = brute_force_min_cut(n_nodes, edges, caps, source, sink)
            assert got == pytest.approx(want, rel=1e-12), f"trial {trial}"
            assert (labels[source] == 1).all()
            assert (labels[sink] == 0).all()

    def test_soft_unaries_match_brute_force(self, rng):
        for trial in range(10):
            n_nodes = 8
            edges = [(i, i + 1) for i in range(7)]
            caps = rng.uniform(0.05, 2.0, len(edges))
            t_src = rng.uniform(0, 2.0, n_nodes)
            t_snk = rng.uniform(0, 2.0, n_nodes)
            g = manual_graph(
                n_nodes, edges, caps, [0], [7], t_source=t_src, t_sink=t_snk
            )
            labels = min_cut(g).bits.reshape(-1)[g.nodes]
            got = cut_cost(g, labels)
            want, _ = brute_force_min_cut(
                n_nodes, edges, caps, [0], [7], t_source=t_src, t_sink=t_snk
            )
            assert got == pytest.approx(want, rel=1e-12), f"trial {trial}"


class TestSegmentEndToEnd:
    def test_attention_octant_is_segmented(self):
        n = 6
        scene = FeatureGrid.filled(n, density=2.0, color=0.0)
        # Give the edit octant a distinct color so smoothness helps the cut.
        octant = np.zeros((n, n, n), dtype=bool)
        octant[: n // 2, : n // 2, : n // 2] = True
        scene.features[..., 1] = np.where(octant, 2.0, -2.0)

        a_e = AttentionGrid.from_feature_grid(scene)
        a_o = AttentionGrid.from_feature_grid(scene)
        a_e.features[..., 1] = np.where(octant, 3.0, -3.0)
        a_o.features[..., 1] = np.where(octant, -3.0, 3.0)

        mask = segment(scene, a_e, a_o, SegConfig(edit_seeds=10, obj_seeds=10))
        assert np.array_equal(mask.bits.astype(bool), octant)


class TestMerge:
    def test_all_ones_selects_edited(self, rng):
        gi, ge = random_grid(rng, 3), random_grid(rng, 3)
        mask = VoxelMask(resolution=3, bits=np.ones((3, 3, 3), dtype=np.uint8))
        assert np.array_equal(merge(gi, ge, mask).features, ge.features)

    def test_all_zeros_selects_input(self, rng):
        gi, ge = random_grid(rng, 3), random_grid(rng, 3)
        mask = VoxelMask(resolution=3)
        assert np.array_equal(merge(gi, ge, mask).features, gi.features)

    def test_checkerboard_selects_per_voxel(self, rng):
        gi, ge = random_grid(rng, 4), random_grid(rng, 4)
        z, y, x = np.indices((4, 4, 4))
        bits = ((x + y + z) % 2).astype(np.uint8)
        out = merge(gi, ge, VoxelMask(resolution=4, bits=bits))
        flat_out = out.features.reshape(-1, 4)
        flat_i = gi.features.reshape(-1, 4)
        flat_e = ge.features.reshape(-1, 4)
        for v in range(64):
            want = flat_e[v] if bits.reshape(-1)[v] else flat_i[v]
            assert np.array_equal(flat_out[v], want)

    def test_merge_same_grid_is_identity_for_any_mask(self, rng):
        gi = random_grid(rng, 3)
        bits = rng.integers(0, 2, (3, 3, 3)).astype(np.uint8)
        out = merge(gi, gi.copy(), VoxelMask(resolution=3, bits=bits))
        assert np.array_equal(out.features, gi.features)

    def test_resolution_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            merge(random_grid(rng, 3), random_grid(rng, 4), VoxelMask(resolution=3))
