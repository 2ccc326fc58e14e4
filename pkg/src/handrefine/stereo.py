"""Fusion of left/right view hand predictions into one right-view prediction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .camera import StereoRig, average_camera, transfer_camera
from .hand_model import HandModelData, HandParams, rodrigues, rotation_to_rotvec
from .raster import FragmentBuffer


@dataclass(frozen=True, eq=False)
class StereoWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
            raise ValueError("stereo weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def constant(cls, value: float, pose_dim: int = 48) -> "StereoWeights":
        return cls(np.full(pose_dim, float(value)))


@dataclass
class ViewPrediction:
    params: HandParams
    view: Literal["left", "right"]


def _slerp_rotvec(a, b, t):
    """Geodesic blend from rotation ``a`` (t=0) to ``b`` (t=1)."""
    Ra, Rb = rodrigues(a), rodrigues(b)
    return rotation_to_rotvec(Ra @ rodrigues(t * rotation_to_rotvec(Ra.T @ Rb)))


def fuse_pose(right, left, w: StereoWeights, rig: StereoRig, slerp_blend: bool = False) -> np.ndarray:
    """Per-entry blend ``w * right + (1 - w) * left``.

    The left global rotation is first re-expressed in the right camera
    frame through the rig rotation.  With ``slerp_blend`` every 3-entry
    block is blended geodesically using the block's first weight.
    """
    right = np.asarray(right, dtype=np.float64).reshape(-1)
    left = np.asarray(left, dtype=np.float64).reshape(-1)
    if right.shape != left.shape or w.w.shape != right.shape:
        raise ValueError(f"pose length mismatch: {right.size}, {left.size}, weights {w.w.size}")
    left = left.copy()
    if not np.array_equal(rig.rotation, np.eye(3)):
        left[:3] = rotation_to_rotvec(rig.rotation @ rodrigues(left[:3]))
    if not slerp_blend:
        return w.w * right + (1.0 - w.w) * left
    out = np.empty_like(right)
    for k in range(0, right.size, 3):
        out[k:k + 3] = _slerp_rotvec(left[k:k + 3], right[k:k + 3], w.w[k])
    return out


def fuse_shape(s_right, s_left) -> np.ndarray:
    s_right = np.asarray(s_right, dtype=np.float64)
    s_left = np.asarray(s_left, dtype=np.float64)
    if s_right.shape != s_left.shape:
        raise ValueError(f"shape length mismatch: {s_right.size} vs {s_left.size}")
    return 0.5 * (s_right + s_left)


def fuse_prediction(right: ViewPrediction, left: ViewPrediction, w: StereoWeights, rig: StereoRig,
                    root_left, slerp_blend: bool = False) -> HandParams:
    if right.view == left.view:
        raise ValueError("fuse_prediction needs one left and one right view")
    if right.view != "right":
        right, left = left, right
    pose = fuse_pose(right.params.pose, left.params.pose, w, rig, slerp_blend)
    shape = fuse_shape(right.params.shape, left.params.shape)
    camera = average_camera(right.params.camera, transfer_camera(rig, left.params.camera, root_left))
    return HandParams(pose, shape, camera)


def joint_vertex_map(model: HandModelData) -> list:
    """Vertices whose dominant skinning weight belongs to each joint."""
    owner = np.argmax(model.skin_weights, axis=1)
    return [np.flatnonzero(owner == j) for j in range(model.num_joints)]


def joint_face_support(model: HandModelData) -> list:
    """Faces touching at least one vertex influenced by each joint."""
    influenced = model.skin_weights[model.faces].max(axis=1) > 0  # (F, J)
    return [np.flatnonzero(influenced[:, j]) for j in range(model.num_joints)]


def _visibility(frag: FragmentBuffer, verts2d, vertex_ids, support) -> float:
    if vertex_ids.size == 0:
        return 0.0
    h, w = frag.face_id.shape
    cols = np.floor(verts2d[vertex_ids, 0]).astype(np.int64)
    rows = np.floor(verts2d[vertex_ids, 1]).astype(np.int64)
    on_screen = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    hits = np.zeros(vertex_ids.size, dtype=bool)
    faces = frag.face_id[rows[on_screen], cols[on_screen]]
    hits[on_screen] = np.isin(faces, support)
    return float(hits.mean())


def heuristic_weights(frag_right: FragmentBuffer, frag_left: FragmentBuffer, verts2d_right, verts2d_left,
                      model: HandModelData) -> StereoWeights:
    """Visibility-ratio stand-in for learned stereo weights.

    A joint's vertex counts as visible in a view when the fragment covering
    its pixel belongs to a face within the joint's skinning support.  The
    weight for joint ``j`` is ``v_right / (v_right + v_left)`` (0.5 if both
    are zero); the global block stays at 0.5.
    """
    vmap = joint_vertex_map(model)
    support = joint_face_support(model)
    w = np.full(model.pose_dim, 0.5)
    for j in range(1, model.num_joints):
        vr = _visibility(frag_right, np.asarray(verts2d_right), vmap[j], support[j])
        vl = _visibility(frag_left, np.asarray(verts2d_left), vmap[j], support[j])
        if vr + vl > 0:
            w[3 * j:3 * j + 3] = vr / (vr + vl)
    return StereoWeights(w)
