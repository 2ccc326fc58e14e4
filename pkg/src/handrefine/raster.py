"""Soft silhouette rasterization with an analytic backward pass, plus a hard
z-buffered fragment rasterizer.

Pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)`` in the
y-down image frame used by :func:`handrefine.camera.project`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import WeakPerspectiveCamera, project


@dataclass(frozen=True)
class RasterSettings:
    width: int
    height: int
    sigma: Optional[float] = None  # squared pixels; None -> 1e-5 * (W^2 + H^2)
    dist_cutoff: float = 8.0  # pixels
    threads: int = 1

    # beyond d^2 = 40 sigma a triangle's log(1 - D) is below e^-40, under one ulp of 1
    NEGLIGIBLE_LOGIT = 40.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("raster size must be positive")
        if self.sigma is None:
            object.__setattr__(self, "sigma", 1e-5 * (self.width ** 2 + self.height ** 2))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.dist_cutoff > 0:
            raise ValueError("dist_cutoff must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def effective_cutoff(self) -> float:
        """Outside-distance beyond which (face, pixel) pairs are skipped."""
        return min(self.dist_cutoff, float(np.sqrt(self.NEGLIGIBLE_LOGIT * self.sigma)))


@dataclass
class FragmentBuffer:
    face_id: np.ndarray  # (H, W) int, -1 where empty
    barycentric: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), +inf where empty

    @property
    def covered(self) -> np.ndarray:
        return self.face_id >= 0


def _face_pairs(tri, x_lo, x_hi, y_lo, y_hi):
    """Enumerate (face, pixel) candidates whose pixel centers fall inside
    per-face integer boxes; output is face-major, row-major within a face."""
    nx = np.maximum(x_hi - x_lo + 1, 0)
    ny = np.maximum(y_hi - y_lo + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    face = np.repeat(np.arange(tri.shape[0]), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    nxf = nx[face]
    px = x_lo[face] + local % np.maximum(nxf, 1)
    py = y_lo[face] + local // np.maximum(nxf, 1)
    return face, px, py


def _pixel_boxes(tri, pad, x_range, y_range):
    lo = tri.min(axis=1) - pad
    hi = tri.max(axis=1) + pad
    x_lo = np.maximum(np.ceil(lo[:, 0] - 0.5), x_range[0]).astype(np.int64)
    x_hi = np.minimum(np.floor(hi[:, 0] - 0.5), x_range[1] - 1).astype(np.int64)
    y_lo = np.maximum(np.ceil(lo[:, 1] - 0.5), y_range[0]).astype(np.int64)
    y_hi = np.minimum(np.floor(hi[:, 1] - 0.5), y_range[1] - 1).astype(np.int64)
    return x_lo, x_hi, y_lo, y_hi


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _soft_pairs(verts2d, faces, settings, rows):
    """Per (face, pixel) pair: signed logits and the data needed for gradients."""
    tri = verts2d[faces]  # (F, 3, 2)
    area2 = _cross2(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    valid = np.abs(area2) > 1e-12
    face_ids = np.flatnonzero(valid)
    tri = tri[valid]
    boxes = _pixel_boxes(tri, settings.effective_cutoff, (0, settings.width), rows)
    face, px, py = _face_pairs(tri, *boxes)
    p = np.stack([px + 0.5, py + 0.5], axis=1)
    corners = tri[face]  # (P, 3, 2)

    best_d2 = np.full(face.shape, np.inf)
    best_t = np.zeros(face.shape)
    best_e = np.zeros(face.shape, dtype=np.int64)
    signs = []
    for e in range(3):
        a = corners[:, e]
        b = corners[:, (e + 1) % 3]
        ab = b - a
        ap = p - a
        t = np.clip(np.einsum("ij,ij->i", ap, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        diff = ap - t[:, None] * ab
        d2 = np.einsum("ij,ij->i", diff, diff)
        closer = d2 < best_d2
        best_d2 = np.where(closer, d2, best_d2)
        best_t = np.where(closer, t, best_t)
        best_e = np.where(closer, e, best_e)
        signs.append(_cross2(ab, ap))
    signs = np.stack(signs, axis=1)
    inside = np.all(signs > 0, axis=1) | np.all(signs < 0, axis=1)
    keep = inside | (best_d2 <= settings.effective_cutoff ** 2)
    s = np.where(inside, 1.0, -1.0)
    return dict(
        face=face_ids[face[keep]], local_face=face[keep], px=px[keep], py=py[keep],
        p=p[keep], corners=corners[keep], d2=best_d2[keep], t=best_t[keep],
        edge=best_e[keep], sign=s[keep],
    )


def _log_one_minus_sigmoid(z):
    # log(1 - sigmoid(z)) = -softplus(z)
    return -np.logaddexp(0.0, z)


def _row_blocks(settings):
    n = min(settings.threads, settings.height)
    edges = np.linspace(0, settings.height, n + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(n) if edges[i + 1] > edges[i]]


def _map_blocks(fn, settings):
    blocks = _row_blocks(settings)
    if len(blocks) == 1:
        return [fn(blocks[0])]
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        return list(pool.map(fn, blocks))


def _log_background(verts2d, faces, settings, rows):
    """Per-pixel sum of log(1 - D_i) over faces (face-index order) for a row block."""
    pairs = _soft_pairs(verts2d, faces, settings, rows)
    z = pairs["sign"] * pairs["d2"] / settings.sigma
    h = rows[1] - rows[0]
    flat = (pairs["py"] - rows[0]) * settings.width + pairs["px"]
    acc = np.bincount(flat, weights=_log_one_minus_sigmoid(z), minlength=h * settings.width)
    return acc.reshape(h, settings.width), pairs, z


def render_soft_silhouette(verts2d, faces, settings: RasterSettings) -> np.ndarray:
    """Probabilistic silhouette ``S = 1 - prod_i (1 - sigmoid(s_i d_i^2 / sigma))``."""
    verts2d = np.asarray(verts2d, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.shape[0] == 0:
        return np.zeros((settings.height, settings.width))
    parts = _map_blocks(lambda rows: _log_background(verts2d, faces, settings, rows)[0], settings)
    return -np.expm1(np.concatenate(parts, axis=0))


def soft_silhouette_backward(verts2d, faces, settings: RasterSettings, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * S)`` with respect to the 2D vertex positions."""
    verts2d = np.asarray(verts2d, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    upstream = np.asarray(upstream, dtype=np.float64)
    grad = np.zeros_like(verts2d)
    if faces.shape[0] == 0:
        return grad

    def block(rows):
        log_bg, pairs, z = _log_background(verts2d, faces, settings, rows)
        bg = np.exp(log_bg)
        py = pairs["py"]
        px = pairs["px"]
        D = np.exp(-np.logaddexp(0.0, -z))
        # dS/dz_i = prod_k (1 - D_k) * D_i
        dz = upstream[py, px] * bg[py - rows[0], px] * D
        dd2 = dz * pairs["sign"] / settings.sigma
        corners = pairs["corners"]
        e = pairs["edge"]
        rng = np.arange(e.size)
        a = corners[rng, e]
        b = corners[rng, (e + 1) % 3]
        t = pairs["t"]
        diff = pairs["p"] - (a + t[:, None] * (b - a))
        ga = (-2.0 * (1.0 - t) * dd2)[:, None] * diff
        gb = (-2.0 * t * dd2)[:, None] * diff
        vid = faces[pairs["face"]]
        key = (pairs["face"] * settings.height + py) * settings.width + px
        return key, vid[rng, e], vid[rng, (e + 1) % 3], ga, gb

    parts = _map_blocks(block, settings)
    # canonical pair order so the reduction is independent of the row split
    key, ia, ib, ga, gb = (np.concatenate(x) for x in zip(*parts))
    order = np.argsort(key, kind="stable")
    n = verts2d.shape[0]
    for k in range(2):
        grad[:, k] += np.bincount(ia[order], weights=ga[order, k], minlength=n)
        grad[:, k] += np.bincount(ib[order], weights=gb[order, k], minlength=n)
    return grad


def rasterize_fragments(mesh, cam: WeakPerspectiveCamera, width: int, height: int) -> FragmentBuffer:
    """Hard z-buffer at pixel centers; front-facing triangles only, nearest depth wins."""
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    depth = np.full((height, width), np.inf)
    buf = FragmentBuffer(face_id, bary, depth)
    if faces.shape[0] == 0:
        return buf
    v2 = project(cam, verts)
    tri = v2[faces]
    area2 = _cross2(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    # y-down image: outward normals facing the camera give negative signed area
    front = area2 < -1e-12
    ids = np.flatnonzero(front)
    if ids.size == 0:
        return buf
    tri = tri[front]
    face, px, py = _face_pairs(tri, *_pixel_boxes(tri, 0.0, (0, width), (0, height)))
    p = np.stack([px + 0.5, py + 0.5], axis=1)
    c = tri[face]
    a2 = area2[ids[face]]
    w0 = _cross2(c[:, 2] - c[:, 1], p - c[:, 1]) / a2
    w1 = _cross2(c[:, 0] - c[:, 2], p - c[:, 2]) / a2
    w2 = 1.0 - w0 - w1
    w = np.stack([w0, w1, w2], axis=1)
    inside = np.all(w >= 0, axis=1)
    face, px, py, w = ids[face[inside]], px[inside], py[inside], w[inside]
    z = np.einsum("ij,ij->i", w, verts[faces[face], 2])
    flat = py * width + px
    order = np.lexsort((face, z, flat))
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat[order[1:]] != flat[order[:-1]]
    win = order[first]
    face_id[py[win], px[win]] = face[win]
    bary[py[win], px[win]] = w[win]
    depth[py[win], px[win]] = z[win]
    return buf
