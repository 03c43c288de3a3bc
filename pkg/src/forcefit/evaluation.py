"""Noise injection and scoring: pose error and contact-map metrics.

MPJPE is the mean Euclidean error over reported hand joints, in
millimeters. Contact maps are per-object-vertex contact probabilities
(averaged over frames for static grasps) scored against binary truth with
ROC-AUC (rank statistic, ties averaged) and PR-AUC (step integration of
precision over recall, no interpolation). Both are invariant to monotone
transforms of the predictions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import ContactParams, contact_probability
from .geometry import mesh_query_batch
from .kinematics import HandDoF, pose_hand_all, pose_object_all
from .scene import TRUTH_CONTACT, TRUTH_FREE, SceneTrajectory
from .utils import to_numpy


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    mpjpe_mm: float
    pr_auc: float
    roc_auc: float

    def as_row(self) -> dict:
        return {"mpjpe_mm": self.mpjpe_mm, "pr_auc": self.pr_auc,
                "roc_auc": self.roc_auc}


def inject_finger_noise(hand_dof: HandDoF, seed: int, shared: bool = True) -> HandDoF:
    """Multiply articulation coefficients by N(1, 0.1) draws.

    With shared=True one 15-vector of multipliers applies to every frame
    (rigid-grasp assumption); rigid DoF are untouched.
    """
    rng = np.random.default_rng(seed)
    coeffs = hand_dof.pose_coeffs.copy()
    if shared:
        mult = rng.normal(1.0, 0.1, size=coeffs.shape[1])
        coeffs *= mult[None, :]
    else:
        coeffs *= rng.normal(1.0, 0.1, size=coeffs.shape)
    return HandDoF(hand_dof.axis_angle.copy(), hand_dof.translation.copy(), coeffs)


def mpjpe(predicted_joints: np.ndarray, true_joints: np.ndarray) -> float:
    """Mean per-joint position error in millimeters; shapes (T, J, 3)."""
    p = np.asarray(predicted_joints, dtype=np.float64)
    t = np.asarray(true_joints, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError("joint arrays must have matching shapes")
    return float(np.linalg.norm(p - t, axis=-1).mean() * 1000.0)


def hand_joints(scene: SceneTrajectory) -> np.ndarray:
    _, joints = pose_hand_all(scene.hand_dof, scene.hand_model)
    return joints


def contact_map_from_pose(scene: SceneTrajectory,
                          params: ContactParams | None = None) -> np.ndarray:
    """Per-object-vertex contact probability, averaged over frames."""
    if params is None:
        params = ContactParams(z=0.002)
    obj_verts, _ = pose_object_all(scene.object_dof, scene.object_mesh)
    hand_verts, _ = pose_hand_all(scene.hand_dof, scene.hand_model)
    q = mesh_query_batch(obj_verts, hand_verts,
                         scene.hand_model.rest_mesh.topology)
    probs = to_numpy(contact_probability(q.distance, params))
    return probs.mean(axis=0)


def labeled_subset(predicted: np.ndarray, truth: np.ndarray):
    """Drop margin-band vertices; return (scores, binary labels)."""
    mask = (truth == TRUTH_CONTACT) | (truth == TRUTH_FREE)
    return predicted[mask], (truth[mask] == TRUTH_CONTACT).astype(np.int8)


def _check_binary(truth: np.ndarray) -> np.ndarray:
    truth = np.asarray(truth)
    if truth.ndim != 1 or not np.isin(truth, (0, 1)).all():
        raise MetricError("truth must be a flat 0/1 array")
    if truth.sum() == 0 or truth.sum() == len(truth):
        raise MetricError("undefined AUC: truth has a single class")
    return truth.astype(bool)


def roc_auc(predicted, truth) -> float:
    """Area under the ROC curve via the rank statistic, ties averaged."""
    truth = _check_binary(truth)
    scores = np.asarray(predicted, dtype=np.float64)
    if scores.shape != truth.shape:
        raise MetricError("prediction/truth length mismatch")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    rank_sum = ranks[truth].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(predicted, truth) -> float:
    """Average-precision-style step integration of the PR curve."""
    truth = _check_binary(truth)
    scores = np.asarray(predicted, dtype=np.float64)
    if scores.shape != truth.shape:
        raise MetricError("prediction/truth length mismatch")
    order = np.argsort(-scores, kind="stable")
    sorted_truth = truth[order].astype(np.float64)
    sorted_scores = scores[order]
    tp = np.cumsum(sorted_truth)
    fp = np.cumsum(1.0 - sorted_truth)
    # evaluate only at threshold boundaries (last index of each tie group)
    boundary = np.ones(len(scores), dtype=bool)
    boundary[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    tp_b = tp[boundary]
    fp_b = fp[boundary]
    n_pos = tp[-1]
    recall = tp_b / n_pos
    precision = tp_b / (tp_b + fp_b)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def score_scene(scene: SceneTrajectory, truth_scene: SceneTrajectory,
                params: ContactParams | None = None) -> MetricsReport:
    """Metrics of `scene`'s poses against the truth scene's annotations."""
    if truth_scene.contact_truth is None:
        raise MetricError("truth scene carries no contact labels")
    err = mpjpe(hand_joints(scene), hand_joints(truth_scene))
    scores, labels = labeled_subset(contact_map_from_pose(scene, params),
                                    truth_scene.contact_truth)
    return MetricsReport(err, pr_auc(scores, labels), roc_auc(scores, labels))
