from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from atgcn.cycles import GaitCycle
from atgcn.errors import ParameterError, ValidationError
from atgcn.skeleton import JOINT_COUNT, OPENPOSE_LAYOUT, SkeletonLayout
from atgcn.st_graph import CENTRIFUGAL_SUBSET, CENTRIPETAL_SUBSET, ROOT_SUBSET, GravityRadii, PartitionConfig, \
    build_partitioned_adjacency, graph_from_cycles, gravity_radii, hop_distances, radii_from_positions, \
    spatial_neighbors, spatial_partition_label, st_label, st_neighbors

CHAIN = SkeletonLayout(['a', 'b', 'c'], [(0, 1), (1, 2)])


class TestNeighbourhoods:

    def test_hop_distances(self):
        hops = hop_distances(CHAIN)
        assert hops.tolist() == [[0, 1, 2], [1, 0, 1], [2, 1, 0]]

    def test_spatial_neighbors(self):
        assert spatial_neighbors(OPENPOSE_LAYOUT, 1, 1) == {0, 1, 2, 5}
        assert spatial_neighbors(OPENPOSE_LAYOUT, 13, 1) == {12, 13}
        assert spatial_neighbors(OPENPOSE_LAYOUT, 13, 0) == {13}
        with pytest.raises(ParameterError):
            spatial_neighbors(OPENPOSE_LAYOUT, 18, 1)

    def test_st_neighbors(self):
        config = PartitionConfig()
        interior = st_neighbors(1, 20, config, 64)
        assert len(interior) == 4 + 8
        assert (16, 1) in interior and (24, 1) in interior and (25, 1) not in interior
        assert (20, 5) in interior and (21, 5) not in interior
        assert len(st_neighbors(1, 0, config, 64)) == 4 + 4
        with pytest.raises(ParameterError):
            st_neighbors(1, 64, config, 64)

    def test_partition_config(self):
        assert PartitionConfig().half_range == 4
        with pytest.raises(ParameterError):
            PartitionConfig(temporal_range=8)
        with pytest.raises(ParameterError):
            PartitionConfig(subset_count=2)


class TestPartition:

    def test_radii_from_positions(self):
        radii = radii_from_positions([[[0.0, 0.0], [2.0, 0.0]], [[0.0, 0.0], [0.0, 4.0]]])
        assert np.allclose(radii.r, [1.5, 1.5])

    def test_radii_are_read_only(self):
        radii = GravityRadii([1.0, 2.0])
        with pytest.raises(ValueError):
            radii.r[0] = 0.0
        with pytest.raises(ValidationError):
            GravityRadii([1.0, -1.0])

    def test_labels(self):
        radii = GravityRadii([1.0, 0.0, 1.0 + 1e-12])
        assert spatial_partition_label(0, 0, radii) == ROOT_SUBSET
        assert spatial_partition_label(0, 1, radii) == CENTRIPETAL_SUBSET
        assert spatial_partition_label(1, 0, radii) == CENTRIFUGAL_SUBSET
        assert spatial_partition_label(0, 2, radii) == ROOT_SUBSET
        assert spatial_partition_label(0, 2, radii, tol=0.0) == CENTRIFUGAL_SUBSET

    def test_st_label(self):
        radii = GravityRadii([1.0, 0.0, 1.0])
        config = PartitionConfig()
        assert st_label(1, 10, 0, 6, radii, config) == CENTRIFUGAL_SUBSET
        assert st_label(1, 10, 1, 10, radii, config) == ROOT_SUBSET + 4 * 3
        assert st_label(0, 10, 1, 14, radii, config) == CENTRIPETAL_SUBSET + 8 * 3

    def test_chain_adjacency(self):
        graph = build_partitioned_adjacency(CHAIN, GravityRadii([1.0, 0.0, 1.0]))
        assert graph.adjacency.shape == (3, 3, 3)
        assert graph.adjacency[ROOT_SUBSET].tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
        assert graph.adjacency[CENTRIPETAL_SUBSET].tolist() == [[0, 1, 0], [0, 0, 0], [0, 1, 0]]
        assert graph.adjacency[CENTRIFUGAL_SUBSET].tolist() == [[0, 0, 0], [0.5, 0, 0.5], [0, 0, 0]]
        assert graph.label(1, 2) == CENTRIFUGAL_SUBSET
        assert (0, 2) not in graph.partition_labels
        assert sorted(graph.rows())[0] == (0, 0, 0, 1.0)
        with pytest.raises(ValueError):
            graph.adjacency[0, 0, 0] = 0.0

    def test_radii_must_match_layout(self):
        with pytest.raises(ValidationError):
            build_partitioned_adjacency(CHAIN, GravityRadii([1.0, 0.0]))

    def test_graph_from_cycles(self):
        keypoints = np.random.RandomState(3).uniform(-1, 1, (8, JOINT_COUNT, 3))
        cycles = [GaitCycle(keypoints, 'v01', 0, 10), GaitCycle(keypoints[::-1], 'v02', 0, 10)]
        graph = graph_from_cycles(OPENPOSE_LAYOUT, cycles)
        assert np.allclose(graph.radii.r, radii_from_positions(keypoints).r)
        assert graph.subset_count == 3 and graph.joint_count == JOINT_COUNT
        with pytest.raises(ValidationError):
            gravity_radii([])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 2.0), min_size=JOINT_COUNT, max_size=JOINT_COUNT))
    def test_every_neighbour_lands_in_one_subset(self, values):
        graph = build_partitioned_adjacency(OPENPOSE_LAYOUT, GravityRadii(values))
        labels = graph.partition_labels
        assert len(labels) == JOINT_COUNT + 2 * len(OPENPOSE_LAYOUT.edge_set)
        for i in range(JOINT_COUNT):
            assert labels[(i, i)] == ROOT_SUBSET
            for k in range(3):
                row = graph.adjacency[k, i]
                assert row.sum() == pytest.approx(1.0) or row.sum() == 0.0
        support = (graph.adjacency > 0).sum(axis=0)
        assert support.max() == 1
        assert support.sum() == len(labels)


class TestGraphProperties:

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(-5.0, 5.0), st.floats(-5.0, 5.0), st.floats(0.25, 4.0))
    def test_radii_follow_translation_and_scale(self, seed, dx, dy, scale):
        positions = np.random.RandomState(seed).uniform(-1, 1, (6, JOINT_COUNT, 2))
        radii = radii_from_positions(positions)
        assert np.allclose(radii_from_positions(positions + [dx, dy]).r, radii.r, atol=1e-12)
        scaled = radii_from_positions(positions * scale)
        assert np.allclose(scaled.r, radii.r * scale, atol=1e-12)
        graph = build_partitioned_adjacency(OPENPOSE_LAYOUT, radii)
        assert build_partitioned_adjacency(OPENPOSE_LAYOUT, scaled).partition_labels == graph.partition_labels

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, JOINT_COUNT - 1), st.integers(1, 12), st.integers(0, 11), st.integers(1, 3),
           st.sampled_from([1, 3, 5, 9]))
    def test_st_neighbors_match_brute_force(self, i, frame_count, t, distance, temporal_range):
        t = t % frame_count
        config = PartitionConfig(spatial_distance=distance, temporal_range=temporal_range)
        hops = hop_distances(OPENPOSE_LAYOUT)
        expected = set()
        for q in range(frame_count):
            for j in range(JOINT_COUNT):
                if (q == t and hops[i, j] <= distance) or (j == i and abs(q - t) <= config.half_range):
                    expected.add((q, j))
        assert st_neighbors(i, t, config, frame_count) == expected

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from([1, 3, 5, 9]), st.integers(10, 40))
    def test_st_label_is_injective(self, temporal_range, t):
        radii = GravityRadii([1.0, 0.0, 2.0])
        config = PartitionConfig(temporal_range=temporal_range)
        offsets = range(-config.half_range, config.half_range + 1)
        labels = [st_label(0, t, j, t + offset, radii, config) for j in range(3) for offset in offsets]
        assert sorted(labels) == list(range(3 * temporal_range))
