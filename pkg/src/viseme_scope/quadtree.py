"""Quadtree for Barnes-Hut repulsive forces in 2-D.

The tree is stored level by level as flat arrays rather than linked nodes,
and all points walk it together: at each level every (point, node) pair
either summarizes the node or is replaced by the pairs of its children.
That keeps the traversal in numpy.

A node is summarized when it is a leaf, or when its cell diagonal over the
distance from the query point to the nearest point of the cell is below
theta. A cell that contains the query point is always opened.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Cell keys are ix * 2**d + iy in int64.
MAX_DEPTH = 30


@dataclass(frozen=True)
class _Level:
    count: np.ndarray  # points per node
    center: np.ndarray  # (m, 2) center of mass
    lower: np.ndarray  # (m, 2) lower-left cell corner
    child_start: np.ndarray  # first child index in the next level
    child_count: np.ndarray  # 0 for leaves


class QuadTree:
    """Level-ordered quadtree over an (N, 2) point set.

    Nodes holding one point, or reaching ``max_depth``, are leaves.
    """

    def __init__(self, points: np.ndarray, max_depth: int = MAX_DEPTH) -> None:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError(f"QuadTree needs (N, 2) points, got {points.shape}")
        self.points = points
        self.origin = points.min(axis=0)
        extent = float((points.max(axis=0) - self.origin).max())
        # Slightly enlarged so the max coordinate stays inside the last cell.
        self.width = extent * (1.0 + 1e-9) if extent > 0 else 1.0
        self.levels: list[_Level] = []
        self._build(max_depth)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def cell_size(self, level: int) -> float:
        return self.width / (1 << level)

    def _cells(self, idx: np.ndarray, level: int) -> np.ndarray:
        n = 1 << level
        cell = np.floor((self.points[idx] - self.origin) / self.width * n).astype(np.int64)
        np.clip(cell, 0, n - 1, out=cell)
        return cell[:, 0] * n + cell[:, 1]

    def _build(self, max_depth: int) -> None:
        n_points = self.points.shape[0]
        # Points that reached the current level and the node holding each.
        point_ids = np.arange(n_points)
        node_ids = np.zeros(n_points, dtype=np.int64)
        count = np.array([n_points])
        center = self.points.mean(axis=0, keepdims=True)
        lower = self.origin[np.newaxis, :].copy()

        for level in range(max_depth + 1):
            splittable = count > 1
            if level == max_depth or not splittable.any():
                empty = np.zeros_like(count)
                self.levels.append(_Level(count, center, lower, empty, empty))
                return

            keep = splittable[node_ids]
            point_ids, parents = point_ids[keep], node_ids[keep]
            keys = self._cells(point_ids, level + 1)
            # Rows sort by parent first, so each parent's children are contiguous.
            pair_keys, inverse = np.unique(
                np.stack([parents, keys], axis=1), axis=0, return_inverse=True
            )
            inverse = inverse.reshape(-1)
            n_children = np.bincount(pair_keys[:, 0], minlength=count.size)
            child_start = np.cumsum(n_children) - n_children
            self.levels.append(_Level(count, center, lower, child_start, n_children))

            m = pair_keys.shape[0]
            side = 1 << (level + 1)
            cell = np.stack([pair_keys[:, 1] // side, pair_keys[:, 1] % side], axis=1)
            lower = self.origin + cell * self.cell_size(level + 1)
            count = np.bincount(inverse, minlength=m)
            sums = np.stack(
                [
                    np.bincount(inverse, weights=self.points[point_ids, 0], minlength=m),
                    np.bincount(inverse, weights=self.points[point_ids, 1], minlength=m),
                ],
                axis=1,
            )
            center = sums / count[:, np.newaxis]
            node_ids = inverse

    def repulsion(self, query: np.ndarray, theta: float) -> tuple[np.ndarray, float]:
        """Approximate Student-t repulsion for every point.

        Returns ``(F, Z)`` where ``F[i] = sum_j q_ij**2 (y_i - y_j)`` and
        ``Z = sum_{i != j} q_ij`` with ``q_ij = 1 / (1 + |y_i - y_j|**2)``.
        ``theta = 0`` visits every leaf and is exact.
        """
        n = query.shape[0]
        force = np.zeros((n, 2))
        z_total = 0.0
        pts = np.arange(n)
        nodes = np.zeros(n, dtype=np.int64)
        theta2 = theta * theta

        for level_index, level in enumerate(self.levels):
            if pts.size == 0:
                break
            diff = query[pts] - level.center[nodes]
            dist2 = np.einsum("ij,ij->i", diff, diff)
            count = level.count[nodes]
            leaf = level.child_count[nodes] == 0
            size = self.cell_size(level_index)
            corner = level.lower[nodes]
            gap = query[pts] - np.clip(query[pts], corner, corner + size)
            gap2 = np.einsum("ij,ij->i", gap, gap)
            # Squared diagonal is 2 * size**2.
            summarize = leaf | (2.0 * size * size < theta2 * gap2)

            use = summarize & (dist2 > 0)
            q = 1.0 / (1.0 + dist2[use])
            weight = count[use] * q
            z_total += float(weight.sum())
            wq = weight * q
            force[:, 0] += np.bincount(pts[use], weights=wq * diff[use, 0], minlength=n)
            force[:, 1] += np.bincount(pts[use], weights=wq * diff[use, 1], minlength=n)

            # A leaf at zero distance holds the point itself plus any
            # coincident points; each of those adds q = 1 to Z and no force.
            self_leaf = summarize & (dist2 == 0)
            z_total += float((count[self_leaf] - 1).sum())

            expand = ~summarize
            if not expand.any():
                break
            parent_pts, parent_nodes = pts[expand], nodes[expand]
            n_children = level.child_count[parent_nodes]
            pts = np.repeat(parent_pts, n_children)
            first = np.repeat(level.child_start[parent_nodes], n_children)
            offsets = np.arange(pts.size) - np.repeat(np.cumsum(n_children) - n_children, n_children)
            nodes = first + offsets

        return force, z_total
