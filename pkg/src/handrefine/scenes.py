"""Synthetic scenes for experiments: framing cameras and perturbed-start trials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import WeakPerspectiveCamera, project
from .hand_model import HandModelData, HandParams, forward
from .losses import View
from .metrics import mask_iou
from .raster import RasterSettings, render_soft_silhouette
from .refine import RefineConfig, init_state, refine_step


def framing_camera(model: HandModelData, width: int, height: int, fill: float = 0.8) -> WeakPerspectiveCamera:
    """Camera that centers the template and scales its larger extent to ``fill`` of the image."""
    T = model.template_vertices
    lo, hi = T[:, :2].min(axis=0), T[:, :2].max(axis=0)
    delta = fill * min(width / (hi[0] - lo[0]), height / (hi[1] - lo[1]))
    center = 0.5 * (lo + hi)
    return WeakPerspectiveCamera((width / 2 - delta * center[0], height / 2 - delta * center[1]), delta)


def render_params(model: HandModelData, params: HandParams, settings: RasterSettings) -> np.ndarray:
    mesh = forward(model, params.pose, params.shape)
    return render_soft_silhouette(project(params.camera, mesh.vertices), model.faces, settings)


@dataclass
class Trial:
    truth: HandParams
    start: HandParams
    target: np.ndarray
    perturbed_joints: np.ndarray


def perturbed_trial(model: HandModelData, seed: int, size: int = 64, pose_noise: float = 0.05,
                    n_joints: int = 3, t_jitter: float = 3.0, articulation: float = 0.1) -> Trial:
    """Ground truth with random articulation and shape; the start pose has
    Gaussian noise on ``n_joints`` random non-root joints and a uniform
    camera translation jitter."""
    rng = np.random.default_rng(seed)
    cam = framing_camera(model, size, size)
    pose = np.zeros(model.pose_dim)
    pose[3:] = rng.normal(0.0, articulation, model.pose_dim - 3)
    truth = HandParams(pose, rng.normal(0.0, 1.0, model.num_shape), cam)
    target = render_params(model, truth, RasterSettings(size, size))
    start_pose = truth.pose.copy()
    joints = rng.choice(np.arange(1, model.num_joints), n_joints, replace=False)
    for j in joints:
        start_pose[3 * j:3 * j + 3] += rng.normal(0.0, pose_noise, 3)
    start_cam = WeakPerspectiveCamera(tuple(np.asarray(cam.t) + rng.uniform(-t_jitter, t_jitter, 2)), cam.delta)
    return Trial(truth, HandParams(start_pose, truth.shape.copy(), start_cam), target, joints)


def iou_trajectory(model: HandModelData, trial: Trial, config: RefineConfig, checkpoints=(0, 3, 15)):
    """Hard-mask IoU (threshold 0.5) against the target at the given iteration counts."""
    size = trial.target.shape
    settings = config.raster_settings(size[1], size[0])
    view = View(trial.target, trial.start.camera)
    state = init_state(model)
    out = {}
    for it in range(max(checkpoints) + 1):
        if it in checkpoints:
            pose = trial.start.pose + state.offsets.d_pose
            shape = trial.start.shape + state.offsets.d_shape
            verts = forward(model, pose, shape).vertices + state.offsets.d_vertices
            cam = trial.start.camera.offset(state.offsets.d_camera)
            out[it] = mask_iou(render_soft_silhouette(project(cam, verts), model.faces, settings), trial.target)
        if it < max(checkpoints):
            state = refine_step(state, model, trial.start, view, config)
    return out, state


def gradcheck_scene(model: HandModelData, seed: int, size: int = 48):
    """Random pose/shape/camera evaluated against the silhouette of a second
    random hand; returns ``(params, view)``."""
    rng = np.random.default_rng(seed)
    base = framing_camera(model, size, size)
    truth = HandParams(rng.normal(0.0, 0.1, model.pose_dim), rng.normal(0.0, 1.0, model.num_shape), base)
    target = render_params(model, truth, RasterSettings(size, size))
    cam = WeakPerspectiveCamera(tuple(np.asarray(base.t) + rng.uniform(-2.0, 2.0, 2)),
                                base.delta * rng.uniform(0.9, 1.1))
    params = HandParams(truth.pose + rng.normal(0.0, 0.1, model.pose_dim),
                        rng.normal(0.0, 1.0, model.num_shape), cam)
    return params, View(target, cam)
