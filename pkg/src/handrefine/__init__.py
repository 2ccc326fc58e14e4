"""Test-time refinement of parametric hand meshes against silhouettes."""

from .camera import StereoRig, WeakPerspectiveCamera, average_camera, project, transfer_camera
from .hand_model import (HandModelData, HandParams, ParamOffsets, PosedMesh, apply_offsets, forward,
                         toy_model)
from .io import load_model
from .losses import LossBreakdown, LossWeights, View, loss_gradient, total_loss
from .raster import RasterSettings, rasterize_fragments, render_soft_silhouette, soft_silhouette_backward
from .refine import RefineConfig, RefineState, init_state, refine, refine_step

__all__ = [
    "HandModelData", "HandParams", "LossBreakdown", "LossWeights", "ParamOffsets", "PosedMesh",
    "RasterSettings", "RefineConfig", "RefineState", "StereoRig", "View", "WeakPerspectiveCamera",
    "apply_offsets", "average_camera", "forward", "init_state", "load_model", "loss_gradient",
    "project", "rasterize_fragments", "refine", "refine_step", "render_soft_silhouette",
    "soft_silhouette_backward", "toy_model", "total_loss", "transfer_camera",
]
