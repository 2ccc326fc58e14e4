"""UV atlas generation, per-frame texture baking and temporal smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hand_model import HandModelData
from .raster import FragmentBuffer

GUTTER = 2  # texels


@dataclass(frozen=True, eq=False)
class UVAtlas:
    uv: np.ndarray  # (F, 3, 2) in [0, 1]; u to the right, v downward in texel rows
    resolution: int


@dataclass(eq=False)
class TextureMap:
    rgb: np.ndarray  # (R, R, 3) in [0, 1]
    weight: np.ndarray  # (R, R), 0 = never observed

    @property
    def resolution(self) -> int:
        return self.rgb.shape[0]

    @classmethod
    def empty(cls, resolution: int) -> "TextureMap":
        return cls(np.zeros((resolution, resolution, 3)), np.zeros((resolution, resolution)))


def chart_texels(atlas_uv: np.ndarray, resolution: int) -> list:
    """Flat indices of the texels whose centers fall inside each chart."""
    centers = (np.arange(resolution) + 0.5) / resolution
    out = []
    for tri in atlas_uv:
        lo = np.floor(tri.min(axis=0) * resolution).astype(int)
        hi = np.ceil(tri.max(axis=0) * resolution).astype(int)
        lo = np.clip(lo, 0, resolution - 1)
        hi = np.clip(hi, 0, resolution)
        uu, vv = np.meshgrid(centers[lo[0]:hi[0]], centers[lo[1]:hi[1]])
        p = np.stack([uu.ravel(), vv.ravel()], axis=1)
        a, b, c = tri
        d = [(b[0] - a[0]) * (p[:, 1] - a[1]) - (b[1] - a[1]) * (p[:, 0] - a[0]),
             (c[0] - b[0]) * (p[:, 1] - b[1]) - (c[1] - b[1]) * (p[:, 0] - b[0]),
             (a[0] - c[0]) * (p[:, 1] - c[1]) - (a[1] - c[1]) * (p[:, 0] - c[0])]
        d = np.stack(d, axis=1)
        inside = np.all(d >= 0, axis=1) | np.all(d <= 0, axis=1)
        cols = np.floor(p[inside, 0] * resolution).astype(int)
        rows = np.floor(p[inside, 1] * resolution).astype(int)
        out.append(rows * resolution + cols)
    return out


def check_atlas(atlas_uv: np.ndarray, resolution: int) -> None:
    if np.any(atlas_uv < 0) or np.any(atlas_uv > 1):
        raise ValueError("uv coordinates must lie in [0, 1]")
    texels = chart_texels(atlas_uv, resolution)
    allt = np.concatenate(texels) if texels else np.zeros(0, dtype=int)
    if np.unique(allt).size != allt.size:
        raise ValueError("uv charts overlap at texel level")


def unwrap(model: HandModelData, resolution: int = 512) -> UVAtlas:
    """Stored UVs when the model carries them, else one right-triangle chart per
    face packed row-major on a square grid with a 2-texel gutter."""
    F = model.faces.shape[0]
    if model.uv is not None:
        check_atlas(model.uv, resolution)
        return UVAtlas(np.array(model.uv), resolution)
    cols = int(np.ceil(np.sqrt(F)))
    cell = resolution // cols
    if cell < 2 * GUTTER + 3:
        raise ValueError(f"resolution {resolution} too small for {F} charts")
    idx = np.arange(F)
    x0 = (idx % cols) * cell + GUTTER
    y0 = (idx // cols) * cell + GUTTER
    span = cell - 2 * GUTTER
    uv = np.empty((F, 3, 2))
    uv[:, 0] = np.stack([x0, y0], axis=1)
    uv[:, 1] = np.stack([x0 + span, y0], axis=1)
    uv[:, 2] = np.stack([x0, y0 + span], axis=1)
    return UVAtlas(uv / resolution, resolution)


def _fragment_texels(atlas: UVAtlas, frag: FragmentBuffer, num_faces: int):
    if atlas.uv.shape[0] != num_faces:
        raise ValueError(f"atlas has {atlas.uv.shape[0]} charts, mesh has {num_faces} faces")
    rows, cols = np.nonzero(frag.covered)
    faces = frag.face_id[rows, cols]
    uv = np.einsum("pk,pkc->pc", frag.barycentric[rows, cols], atlas.uv[faces])
    R = atlas.resolution
    tex = np.clip(np.floor(uv * R).astype(np.int64), 0, R - 1)
    return rows, cols, tex[:, 1] * R + tex[:, 0]


def bake(image, mesh, atlas: UVAtlas, frag: FragmentBuffer) -> TextureMap:
    """Splat each covered pixel's color into its nearest texel; texels hold the
    mean of their samples and the sample count as weight."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != frag.face_id.shape:
        raise ValueError("image and fragment buffer sizes differ")
    rows, cols, texel = _fragment_texels(atlas, frag, np.shape(mesh.faces)[0])
    R = atlas.resolution
    count = np.bincount(texel, minlength=R * R).astype(np.float64)
    rgb = np.stack([np.bincount(texel, weights=image[rows, cols, k], minlength=R * R) for k in range(3)],
                   axis=1).astype(np.float64)
    hit = count > 0
    rgb[hit] /= count[hit, None]
    return TextureMap(rgb.reshape(R, R, 3), count.reshape(R, R))


def render_texture(texture: TextureMap, mesh, atlas: UVAtlas, frag: FragmentBuffer, background=0.0):
    """Nearest-texel lookup for every covered pixel of the fragment buffer."""
    rows, cols, texel = _fragment_texels(atlas, frag, np.shape(mesh.faces)[0])
    h, w = frag.face_id.shape
    img = np.full((h, w, 3), background, dtype=np.float64)
    img[rows, cols] = texture.rgb.reshape(-1, 3)[texel]
    return img


def checker_texture(resolution: int, squares: int = 8) -> TextureMap:
    """Two-color checkerboard, fully observed."""
    idx = np.arange(resolution) * squares // resolution
    on = (idx[:, None] + idx[None, :]) % 2 == 1
    rgb = np.where(on[..., None], np.array([0.9, 0.75, 0.6]), np.array([0.3, 0.2, 0.15]))
    return TextureMap(rgb, np.ones((resolution, resolution)))


def ema_update(prev: TextureMap, fresh: TextureMap, beta: float = 0.7) -> TextureMap:
    """``beta * prev + (1 - beta) * fresh`` on freshly observed texels only."""
    if prev.rgb.shape != fresh.rgb.shape:
        raise ValueError(f"texture resolution mismatch: {prev.resolution} vs {fresh.resolution}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    seen = fresh.weight > 0
    rgb = prev.rgb.copy()
    if beta == 0.0:
        rgb[seen] = fresh.rgb[seen]
    elif beta != 1.0:
        rgb[seen] = beta * prev.rgb[seen] + (1.0 - beta) * fresh.rgb[seen]
    return TextureMap(rgb, np.maximum(prev.weight, fresh.weight))
