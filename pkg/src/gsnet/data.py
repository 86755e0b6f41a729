"""Pose dataset files, preprocessing, and deterministic synthetic poses.

The synthetic generator produces articulated skeletons by forward
kinematics from the root: every bone has a fixed per-topology length and a
rest direction that a random bounded rotation perturbs per record. The 3D
pose is stored in camera coordinates (millimeters); the 2D pose is its
pinhole projection, so the pair in the file satisfies the declared camera
model exactly. Root-centering of the 3D targets happens as a preprocessing
step at training/evaluation time, not in the stored file.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .io_utils import read_json, write_json_atomic
from .skeleton import SkeletonGraph
from .validation import check_array

# Synthetic pinhole camera: chosen so projected coordinates land in a
# pixel-like range, not taken from any real capture setup.
FOCAL_LENGTH = 1000.0
CAMERA_DISTANCE_MM = 4000.0

_ACTIONS = ("Walking", "Sitting", "Greeting", "Posing")
_MAX_SWING_RAD = 0.6


class DatasetError(ValueError):
    """Raised for unparseable or invalid dataset files."""


@dataclass(frozen=True)
class PoseRecord:
    """One paired sample: 2D keypoints and the 3D pose in millimeters."""

    pose2d: np.ndarray
    pose3d: np.ndarray
    action: str | None = None
    subject: str | None = None


@dataclass(frozen=True)
class NormStats:
    """Per joint-coordinate mean and effective scale of the 2D inputs."""

    mean2d: np.ndarray
    std2d: np.ndarray

    def to_dict(self) -> dict:
        return {"mean2d": self.mean2d.tolist(), "std2d": self.std2d.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(mean2d=np.asarray(data["mean2d"], dtype=np.float64),
                   std2d=np.asarray(data["std2d"], dtype=np.float64))


@dataclass
class DatasetFile:
    """A topology, its pose records, and any normalization already applied."""

    topology: SkeletonGraph
    records: list[PoseRecord]
    norm: NormStats | None = None

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# preprocessing

def zero_center_root(records: list[PoseRecord], root_index: int) -> list[PoseRecord]:
    """Translate each 3D pose so its root joint sits exactly at the origin."""
    out = []
    for rec in records:
        pose3d = rec.pose3d - rec.pose3d[root_index]
        out.append(PoseRecord(pose2d=rec.pose2d, pose3d=pose3d,
                              action=rec.action, subject=rec.subject))
    return out


def compute_norm_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and scale over the leading (sample) axis.

    Coordinates with zero spread keep scale 1 (left unscaled) and trigger
    a warning, so the transform stays invertible.
    """
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    if np.any(std == 0.0):
        warnings.warn("zero standard deviation in some coordinates; leaving them unscaled")
        std = np.where(std == 0.0, 1.0, std)
    return mean, std


def standardize_2d(records: list[PoseRecord],
                   stats: NormStats | None = None) -> tuple[list[PoseRecord], NormStats]:
    """Standardize 2D inputs per joint-coordinate.

    Training computes the statistics from ``records``; evaluation passes
    the training-set ``stats`` so both splits share one transform.
    """
    if stats is None:
        stacked = np.stack([rec.pose2d for rec in records])
        mean, std = compute_norm_stats(stacked)
        stats = NormStats(mean2d=mean, std2d=std)
    out = []
    for rec in records:
        pose2d = (rec.pose2d - stats.mean2d) / stats.std2d
        out.append(PoseRecord(pose2d=pose2d, pose3d=rec.pose3d,
                              action=rec.action, subject=rec.subject))
    return out, stats


def records_to_arrays(records: list[PoseRecord]):
    """Stack records into ``(B, N, 2)`` / ``(B, N, 3)`` arrays plus tags."""
    x2d = np.stack([rec.pose2d for rec in records])
    y3d = np.stack([rec.pose3d for rec in records])
    actions = [rec.action for rec in records]
    return x2d, y3d, actions


# ---------------------------------------------------------------------------
# synthetic poses

def bone_lengths(graph: SkeletonGraph) -> dict[tuple[int, int], float]:
    """Fixed per-edge lengths in millimeters, derived from tree depth.

    Bones closer to the root are longer; the rule is arbitrary but
    deterministic, so every record generated for a topology shares the
    same skeleton dimensions.
    """
    parents, order = _tree_structure(graph)
    depth = {graph.root_index: 0}
    lengths = {}
    for child in order:
        parent = parents[child]
        depth[child] = depth[parent] + 1
        key = (min(parent, child), max(parent, child))
        lengths[key] = 150.0 + 300.0 * 0.8 ** (depth[child] - 1)
    return lengths


def _tree_structure(graph: SkeletonGraph):
    """BFS parents and visit order from the root; requires a kinematic tree."""
    n = graph.num_joints
    if len(graph.edges) != n - 1:
        raise ValueError(
            f"synthetic poses need a kinematic tree ({n - 1} edges), got {len(graph.edges)}"
        )
    neighbors = [[] for _ in range(n)]
    for i, j in graph.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    for adj in neighbors:
        adj.sort()
    parents = {}
    order = []
    queue = [graph.root_index]
    seen = {graph.root_index}
    while queue:
        node = queue.pop(0)
        for nxt in neighbors[node]:
            if nxt not in seen:
                seen.add(nxt)
                parents[nxt] = node
                order.append(nxt)
                queue.append(nxt)
    if len(seen) != n:
        raise ValueError("topology is not connected; cannot run forward kinematics")
    return parents, order


def _rest_directions(order) -> dict[int, np.ndarray]:
    golden = 2.399963229728653
    dirs = {}
    for k, child in enumerate(order):
        elev = 0.9 * np.sin(1.7 * k + 0.4)
        azim = golden * k
        dirs[child] = np.array([
            np.cos(elev) * np.cos(azim),
            np.sin(elev),
            np.cos(elev) * np.sin(azim),
        ])
    return dirs


def _rotate(vec: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return vec * c + np.cross(axis, vec) * s + axis * np.dot(axis, vec) * (1.0 - c)


def project_points(points3d: np.ndarray) -> np.ndarray:
    """Pinhole projection ``u = f * x / z`` of camera-frame millimeters."""
    z = points3d[..., 2:3]
    return FOCAL_LENGTH * points3d[..., :2] / z


def synthesize_poses(graph: SkeletonGraph, count: int, seed: int) -> DatasetFile:
    """Generate ``count`` deterministic articulated poses for a tree topology."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    parents, order = _tree_structure(graph)
    lengths = bone_lengths(graph)
    rest = _rest_directions(order)
    rng = np.random.default_rng(seed)
    records = []
    for idx in range(count):
        root = np.array([
            rng.uniform(-300.0, 300.0),
            rng.uniform(-200.0, 200.0),
            CAMERA_DISTANCE_MM + rng.uniform(-400.0, 400.0),
        ])
        joints = np.zeros((graph.num_joints, 3))
        joints[graph.root_index] = root
        for child in order:
            parent = parents[child]
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(0.0, _MAX_SWING_RAD)
            direction = _rotate(rest[child], axis, angle)
            key = (min(parent, child), max(parent, child))
            joints[child] = joints[parent] + lengths[key] * direction
        records.append(PoseRecord(
            pose2d=project_points(joints),
            pose3d=joints,
            action=_ACTIONS[idx % len(_ACTIONS)],
            subject=f"S{1 + idx % 3}",
        ))
    return DatasetFile(topology=graph, records=records, norm=None)


# ---------------------------------------------------------------------------
# file format

def dataset_to_dict(dataset: DatasetFile) -> dict:
    return {
        "topology": dataset.topology.to_dict(),
        "norm": dataset.norm.to_dict() if dataset.norm is not None else None,
        "records": [
            {
                "pose2d": rec.pose2d.tolist(),
                "pose3d": rec.pose3d.tolist(),
                "action": rec.action,
                "subject": rec.subject,
            }
            for rec in dataset.records
        ],
    }


def save_dataset(path, dataset: DatasetFile) -> None:
    write_json_atomic(path, dataset_to_dict(dataset))


def load_dataset(path) -> DatasetFile:
    """Read and validate a dataset file.

    Raises:
        DatasetError: on malformed JSON (with line context) or on records
            with the wrong joint count / non-finite values (naming the
            record index).
    """
    try:
        data = read_json(path)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        topology = SkeletonGraph.from_dict(data["topology"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: bad topology: {exc}") from exc
    n = topology.num_joints
    records = []
    for idx, raw in enumerate(data.get("records", [])):
        try:
            pose2d = check_array(raw["pose2d"], "pose2d", shape=(n, 2))
            pose3d = check_array(raw["pose3d"], "pose3d", shape=(n, 3))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: record {idx}: {exc}") from exc
        records.append(PoseRecord(pose2d=pose2d, pose3d=pose3d,
                                  action=raw.get("action"), subject=raw.get("subject")))
    norm = NormStats.from_dict(data["norm"]) if data.get("norm") else None
    return DatasetFile(topology=topology, records=records, norm=norm)
