"""Test-time refinement: SGD with classical momentum over parameter offsets."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hand_model import HandModelData, HandParams, ParamOffsets, PosedMesh, apply_offsets
from .losses import LossWeights, Views, _as_views, loss_gradient, total_loss
from .raster import RasterSettings


@dataclass(frozen=True)
class RefineConfig:
    eta: float = 0.002
    alpha: float = 0.9
    iterations: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    sigma: Optional[float] = None
    dist_cutoff: float = 8.0
    threads: int = 1
    warm_start: bool = False
    reduction: str = "mean"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def raster_settings(self, width: int, height: int) -> RasterSettings:
        return RasterSettings(width, height, self.sigma, self.dist_cutoff, self.threads)


@dataclass
class RefineState:
    offsets: ParamOffsets
    velocity: ParamOffsets
    iteration: int = 0
    history: list = field(default_factory=list)


def init_state(model: HandModelData) -> RefineState:
    return RefineState(ParamOffsets.zeros(model), ParamOffsets.zeros(model), 0, [])


def _settings(views, config):
    h, w = np.shape(_as_views(views)[0].target)
    return config.raster_settings(w, h)


def _check_finite(grad: ParamOffsets):
    for name, arr in grad.blocks():
        bad = np.flatnonzero(~np.isfinite(np.ravel(arr)))
        if bad.size:
            idx = np.unravel_index(bad[0], np.shape(arr))
            raise FloatingPointError(f"non-finite gradient in {name}{list(idx)}")


def momentum_update(state: RefineState, grad: ParamOffsets, eta: float, alpha: float) -> RefineState:
    velocity = state.velocity.scaled_add(grad, alpha, eta)
    offsets = state.offsets.scaled_add(velocity, 1.0, -1.0)
    return RefineState(offsets, velocity, state.iteration + 1, list(state.history))


def refine_step(state: RefineState, model: HandModelData, params: HandParams, views: Views,
                config: RefineConfig = RefineConfig()) -> RefineState:
    settings = _settings(views, config)
    breakdown, grad = loss_gradient(model, params, state.offsets, views, config.weights, settings,
                                     config.reduction)
    _check_finite(grad)
    new = momentum_update(state, grad, config.eta, config.alpha)
    if not new.history:
        new.history.append(breakdown)
    new.history.append(total_loss(model, params, new.offsets, views, config.weights, settings,
                                  config.reduction))
    return new


def effective_params(params: HandParams, offsets: ParamOffsets) -> HandParams:
    return HandParams(params.pose + offsets.d_pose, params.shape + offsets.d_shape,
                      params.camera.offset(offsets.d_camera))


def refine(model: HandModelData, params: HandParams, views: Views,
           config: RefineConfig = RefineConfig(), state: Optional[RefineState] = None):
    """Run ``config.iterations`` momentum steps.

    Returns ``(mesh, refined_params, d_vertices, state)``.  A previous
    ``state`` is resumed only when ``config.warm_start`` is set.
    """
    params.check(model)
    if state is None or not config.warm_start:
        state = init_state(model)
    if not state.history:
        settings = _settings(views, config)
        state.history.append(total_loss(model, params, state.offsets, views, config.weights, settings,
                                        config.reduction))
    for _ in range(config.iterations):
        state = refine_step(state, model, params, views, config)
    mesh: PosedMesh = apply_offsets(model, params, state.offsets)
    return mesh, effective_params(params, state.offsets), state.offsets.d_vertices, state


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "sil", "v", "n", "lap", "edge", "total"])
    for i, b in enumerate(history):
        writer.writerow([i] + [repr(float(getattr(b, k))) for k in ("sil", "v", "n", "lap", "edge", "total")])
    return buf.getvalue()
