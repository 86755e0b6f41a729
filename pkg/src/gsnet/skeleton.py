"""Skeleton graphs, normalized adjacency/Laplacian, and the triangular split.

The matrices produced here feed both the iterative graph filter and the
network layers: a binary adjacency ``A`` is degree-normalized to
``A_hat = D^{-1/2} A D^{-1/2}``, the normalized Laplacian is
``L = I - A_hat``, and the smoothing operator ``I + beta * L`` is split as
``(1 + beta) * I`` minus the strictly lower and strictly upper triangular
parts of ``beta * A_hat``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .validation import check_in_range, check_square, frozen

# Human3.6M kinematic tree, hip-rooted. The dataset convention used
# throughout: 17 joints including the nose; the 16-joint variant drops the
# nose and connects the thorax directly to the head.
_H36M_17_NAMES = (
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot",
    "Spine", "Thorax", "Nose", "Head",
    "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
)
_H36M_17_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13),
    (8, 14), (14, 15), (15, 16),
)
_H36M_16_NAMES = (
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot",
    "Spine", "Thorax", "Head",
    "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
)
_H36M_16_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9),
    (8, 10), (10, 11), (11, 12),
    (8, 13), (13, 14), (14, 15),
)


@dataclass(frozen=True)
class SkeletonGraph:
    """An undirected joint graph with a designated root joint.

    Edges are unordered joint-index pairs; self-loops and duplicates are
    rejected. When ``expect_tree`` is set the constructor additionally
    requires exactly ``num_joints - 1`` edges.
    """

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    root_index: int = 0
    joint_names: tuple[str, ...] | None = None
    expect_tree: bool = False

    def __post_init__(self):
        n = self.num_joints
        if n < 1:
            raise ValueError(f"num_joints must be positive, got {n}")
        if not 0 <= self.root_index < n:
            raise ValueError(f"root_index {self.root_index} out of range for {n} joints")
        canon = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) has endpoints outside [0, {n})")
            if i == j:
                raise ValueError(f"self-loop at joint {i} is not allowed")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "edges", tuple(canon))
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != n:
                raise ValueError(f"expected {n} joint names, got {len(names)}")
            object.__setattr__(self, "joint_names", names)
        if self.expect_tree and len(self.edges) != n - 1:
            raise ValueError(
                f"a kinematic tree on {n} joints needs {n - 1} edges, "
                f"got {len(self.edges)}"
            )

    def to_dict(self) -> dict:
        out = {
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.edges],
            "root": self.root_index,
        }
        if self.joint_names is not None:
            out["names"] = list(self.joint_names)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SkeletonGraph":
        return cls(
            num_joints=int(data["num_joints"]),
            edges=tuple((int(i), int(j)) for i, j in data["edges"]),
            root_index=int(data.get("root", 0)),
            joint_names=tuple(data["names"]) if data.get("names") else None,
        )


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Degree-normalized adjacency ``D^{-1/2} A D^{-1/2}`` plus node degrees."""

    entries: np.ndarray
    degree: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class MatrixSplit:
    """Triangular decomposition of the smoothing operator ``I + beta * L``.

    ``scale`` is ``1 + beta`` (the uniform diagonal), ``upper`` holds the
    strictly upper triangular part of ``beta * A_hat``; the strictly lower
    part is ``upper.T`` because ``A_hat`` is symmetric with zero diagonal,
    so ``scale * I - upper.T - upper`` reconstructs ``I + beta * L``.
    """

    scale: float
    upper: np.ndarray
    beta: float

    @property
    def num_nodes(self) -> int:
        return self.upper.shape[0]

    def lower(self) -> np.ndarray:
        """Strictly lower triangular part, the transpose of ``upper``."""
        return self.upper.T

    def system_matrix(self) -> np.ndarray:
        """Reassemble ``I + beta * L`` from the split."""
        n = self.num_nodes
        return self.scale * np.eye(n) - self.upper.T - self.upper


def human36m_topology(variant: int = 17) -> SkeletonGraph:
    """Return the standard Human3.6M kinematic tree with the hip as root.

    Args:
        variant: 16 or 17, the number of joints.
    """
    if variant == 17:
        names, edges = _H36M_17_NAMES, _H36M_17_EDGES
    elif variant == 16:
        names, edges = _H36M_16_NAMES, _H36M_16_EDGES
    else:
        raise ValueError(f"variant must be 16 or 17, got {variant}")
    return SkeletonGraph(
        num_joints=variant,
        edges=edges,
        root_index=0,
        joint_names=names,
        expect_tree=True,
    )


def adjacency_matrix(graph: SkeletonGraph) -> np.ndarray:
    """Dense symmetric binary adjacency with zero diagonal."""
    a = np.zeros((graph.num_joints, graph.num_joints))
    for i, j in graph.edges:
        a[i, j] = a[j, i] = 1.0
    return frozen(a)


def normalize_adjacency(adjacency: np.ndarray) -> NormalizedAdjacency:
    """Degree-normalize a binary adjacency matrix.

    Isolated nodes (degree zero) use the convention ``deg^{-1/2} = 0``,
    giving an all-zero row and column rather than a division by zero.
    """
    a = check_square(adjacency, "adjacency")
    degree = a.sum(axis=1)
    inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(np.where(degree > 0, degree, 1.0)), 0.0)
    entries = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return NormalizedAdjacency(entries=frozen(entries), degree=frozen(degree))


def normalized_laplacian(norm_adj: NormalizedAdjacency) -> np.ndarray:
    """The normalized Laplacian ``I - A_hat``."""
    n = norm_adj.num_nodes
    return frozen(np.eye(n) - norm_adj.entries)


def triangular_split(norm_adj: NormalizedAdjacency | np.ndarray, beta: float) -> MatrixSplit:
    """Split ``I + beta * L`` into its diagonal and strict triangular parts.

    Accepts either a ``NormalizedAdjacency`` or a symmetric zero-diagonal
    matrix directly (the modulated adjacency of the network reuses this).

    Raises:
        ValueError: if ``beta`` is outside ``[0, 1)``.
    """
    beta = check_in_range(beta, "beta", 0.0, 1.0)
    entries = norm_adj.entries if isinstance(norm_adj, NormalizedAdjacency) else norm_adj
    entries = check_square(entries, "normalized adjacency")
    upper = np.triu(beta * entries, k=1)
    return MatrixSplit(scale=1.0 + beta, upper=frozen(upper), beta=beta)


def load_topology(path) -> SkeletonGraph:
    """Read a skeleton topology from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return SkeletonGraph.from_dict(data)
