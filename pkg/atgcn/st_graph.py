"""
The spatiotemporal skeleton graph and its spatial configuration partition.

Every joint's 1-hop neighbourhood is split in three subsets by how far the
neighbour sits from the skeleton's gravity centre compared to the joint
itself: the same distance (root), closer (centripetal) or farther
(centrifugal). Each subset becomes a row-normalized J x J matrix. The
temporal half of the neighbourhood is realized by the temporal convolution
of the model, st_neighbors and st_label describe it for inspection.
"""
from collections import OrderedDict

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from atgcn.errors import ParameterError, ValidationError
from atgcn.skeleton import OPENPOSE_LAYOUT

ROOT_SUBSET = 0
CENTRIPETAL_SUBSET = 1
CENTRIFUGAL_SUBSET = 2
SUBSET_COUNT = 3

DEFAULT_RADIUS_TOLERANCE = 1e-9
DEFAULT_TEMPORAL_RANGE = 9


class PartitionConfig(object):

    def __init__(self, spatial_distance=1, temporal_range=DEFAULT_TEMPORAL_RANGE, subset_count=SUBSET_COUNT,
                 radius_tolerance=DEFAULT_RADIUS_TOLERANCE):
        if spatial_distance < 1:
            raise ParameterError('spatial distance must be at least 1, got %s' % spatial_distance)
        if temporal_range < 1 or temporal_range % 2 == 0:
            raise ParameterError('temporal range must be odd and positive, got %s' % temporal_range)
        if subset_count != SUBSET_COUNT:
            raise ParameterError('spatial configuration partitioning has %d subsets, got %s'
                                 % (SUBSET_COUNT, subset_count))
        if radius_tolerance < 0:
            raise ParameterError('radius tolerance must be non-negative, got %s' % radius_tolerance)
        self.spatial_distance = spatial_distance
        self.temporal_range = temporal_range
        self.subset_count = subset_count
        self.radius_tolerance = radius_tolerance

    @property
    def half_range(self):
        return self.temporal_range // 2


class GravityRadii(object):
    """
    Per-joint mean distance from the gravity centre over the training frames.
    """

    def __init__(self, r):
        r = np.array(r, dtype=np.float64)
        if r.ndim != 1:
            raise ValidationError('radii must be a vector, got shape %s' % (r.shape,))
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValidationError('radii must be finite and non-negative')
        r.setflags(write=False)
        self.r = r

    def __len__(self):
        return self.r.shape[0]

    def __getitem__(self, joint):
        return self.r[joint]


class PartitionedGraph(object):
    """
    The S stacked adjacency matrices plus the subset label of every connected
    (i, j) pair. Read-only once built.
    """

    def __init__(self, adjacency, partition_labels, radii, layout):
        adjacency = np.array(adjacency, dtype=np.float64)
        adjacency.setflags(write=False)
        self.adjacency = adjacency
        self._partition_labels = dict(partition_labels)
        self.radii = radii
        self.layout = layout

    @property
    def partition_labels(self):
        return dict(self._partition_labels)

    @property
    def subset_count(self):
        return self.adjacency.shape[0]

    @property
    def joint_count(self):
        return self.adjacency.shape[1]

    def label(self, i, j):
        return self._partition_labels[(i, j)]

    def rows(self):
        """
        (subset, i, j, weight) for every non-zero entry, for the graph table.
        """
        for k, i, j in zip(*np.nonzero(self.adjacency)):
            yield int(k), int(i), int(j), float(self.adjacency[k, i, j])


def hop_distances(layout):
    """
    @rtype: J x J float array of shortest path lengths, inf where unreachable
    """
    size = layout.joint_count
    rows = [i for i, j in layout.edge_set]
    cols = [j for i, j in layout.edge_set]
    edges = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
    return shortest_path(edges, directed=False, unweighted=True)


def _check_joint(layout, i):
    if not 0 <= i < layout.joint_count:
        raise ParameterError('joint index %s is outside [0, %d)' % (i, layout.joint_count))


def spatial_neighbors(layout, i, distance, hops=None):
    _check_joint(layout, i)
    if distance < 0:
        raise ParameterError('neighbour distance must be non-negative, got %s' % distance)
    if hops is None:
        hops = hop_distances(layout)
    return set(int(j) for j in np.flatnonzero(hops[i] <= distance))


def st_neighbors(i, t, config, frame_count, layout=OPENPOSE_LAYOUT):
    if not 0 <= t < frame_count:
        raise ParameterError('frame %s is outside [0, %d)' % (t, frame_count))
    neighbors = set((t, j) for j in spatial_neighbors(layout, i, config.spatial_distance))
    first = max(0, t - config.half_range)
    last = min(frame_count - 1, t + config.half_range)
    neighbors.update((q, i) for q in range(first, last + 1))
    return neighbors


def radii_from_positions(positions):
    """
    @param positions: [frames, joints, >= 2] array, only x and y are used
    """
    xy = np.asarray(positions, dtype=np.float64)[..., :2]
    if xy.shape[0] == 0:
        raise ValidationError('gravity radii need at least one frame')
    centers = xy.mean(axis=1, keepdims=True)
    return GravityRadii(np.linalg.norm(xy - centers, axis=2).mean(axis=0))


def gravity_radii(train_cycles):
    if not train_cycles:
        raise ValidationError('gravity radii need at least one training cycle')
    return radii_from_positions(np.concatenate([cycle.keypoints for cycle in train_cycles], axis=0))


def spatial_partition_label(i, j, radii, tol=DEFAULT_RADIUS_TOLERANCE):
    r_i, r_j = radii[i], radii[j]
    if abs(r_j - r_i) <= tol:
        return ROOT_SUBSET
    if r_j < r_i:
        return CENTRIPETAL_SUBSET
    return CENTRIFUGAL_SUBSET


def st_label(i, t, j, q, radii, config):
    return spatial_partition_label(i, j, radii, config.radius_tolerance) + \
        (q - t + config.half_range) * config.subset_count


def build_partitioned_adjacency(layout, radii, tol=DEFAULT_RADIUS_TOLERANCE):
    if len(radii) != layout.joint_count:
        raise ValidationError('%d radii for %d joints' % (len(radii), layout.joint_count))
    hops = hop_distances(layout)
    size = layout.joint_count
    counts = np.zeros((SUBSET_COUNT, size, size))
    labels = OrderedDict()
    for i in range(size):
        for j in sorted(spatial_neighbors(layout, i, 1, hops)):
            k = spatial_partition_label(i, j, radii, tol)
            labels[(i, j)] = k
            counts[k, i, j] = 1.0
    sizes = counts.sum(axis=2, keepdims=True)
    adjacency = np.divide(counts, sizes, out=np.zeros_like(counts), where=sizes > 0)
    return PartitionedGraph(adjacency, labels, radii, layout)


def graph_from_cycles(layout, cycles, tol=DEFAULT_RADIUS_TOLERANCE):
    return build_partitioned_adjacency(layout, gravity_radii(cycles), tol)
