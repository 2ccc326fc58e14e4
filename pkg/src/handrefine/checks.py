"""Finite-difference verification of the analytic loss gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hand_model import HandModelData, HandParams, ParamOffsets
from .losses import LossWeights, Views, loss_gradient, total_loss
from .raster import RasterSettings

STEPS = {"d_pose": 1e-4, "d_shape": 1e-4, "d_camera": 1e-4, "d_vertices": 1e-5}


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple  # (block, flat index, analytic, finite difference)
    checked: int  # components with |g| above the floor
    total: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def central_difference(model: HandModelData, params: HandParams, offsets: ParamOffsets, views: Views,
                       weights: LossWeights, settings: RasterSettings, reduction: str = "mean",
                       steps: dict = STEPS) -> ParamOffsets:
    """Gradient of ``total_loss`` by central differences, one component at a time."""
    fd = ParamOffsets.zeros(model)
    for name, arr in fd.blocks():
        h = steps[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                probe = offsets.copy()
                getattr(probe, name).reshape(-1)[i] += sign * h
                vals.append(total_loss(model, params, probe, views, weights, settings, reduction).total)
            flat[i] = (vals[0] - vals[1]) / (2.0 * h)
    return fd


def gradcheck(model: HandModelData, params: HandParams, offsets: ParamOffsets, views: Views,
              weights: LossWeights = LossWeights(), settings: RasterSettings = None, reduction: str = "mean",
              floor: float = 1e-8) -> GradCheckResult:
    """Relative error ``|g - fd| / max(|g|, |fd|)`` over components with ``|g| > floor``."""
    _, g = loss_gradient(model, params, offsets, views, weights, settings, reduction)
    fd = central_difference(model, params, offsets, views, weights, settings, reduction)
    worst, max_err, checked, total = None, 0.0, 0, 0
    for (name, a), (_, b) in zip(g.blocks(), fd.blocks()):
        a, b = np.ravel(a), np.ravel(b)
        total += a.size
        mask = np.abs(a) > floor
        checked += int(mask.sum())
        if not mask.any():
            continue
        err = np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))
        err[~mask] = 0.0
        i = int(np.argmax(err))
        if err[i] > max_err or worst is None:
            max_err, worst = float(err[i]), (name, i, float(a[i]), float(b[i]))
    return GradCheckResult(max_err, worst, checked, total)


def _nearest_edges(model, params, offsets, view, settings):
    from .camera import project
    from .hand_model import apply_offsets
    from .raster import _soft_pairs

    verts = view.place(apply_offsets(model, params, offsets).vertices)
    v2d = project(view.camera.offset(offsets.d_camera), verts)
    pairs = _soft_pairs(v2d, model.faces, settings, (0, settings.height))
    keys = (pairs["face"] * settings.height + pairs["py"]) * settings.width + pairs["px"]
    inside = pairs["sign"] > 0
    return dict(zip(keys[inside].tolist(), pairs["edge"][inside].tolist()))


def straddles_kink(model: HandModelData, params: HandParams, offsets: ParamOffsets, view, settings: RasterSettings,
                   block: str, index: int, h: float) -> bool:
    """True when the +-h probe of one component changes which edge is nearest
    to some covered pixel center: the boundary distance is not differentiable
    there, so a central difference of that width averages two one-sided slopes."""
    maps = []
    for sign in (1.0, -1.0, 0.0):
        probe = offsets.copy()
        getattr(probe, block).reshape(-1)[index] += sign * h
        maps.append(_nearest_edges(model, params, probe, view, settings))
    common = set(maps[0]) & set(maps[1]) & set(maps[2])
    return any(len({m[k] for m in maps}) > 1 for k in common)
