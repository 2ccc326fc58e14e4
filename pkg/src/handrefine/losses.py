"""Refinement loss: silhouette term plus mesh regularizers, with exact gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .camera import WeakPerspectiveCamera, project
from .hand_model import HandModelData, HandParams, ParamOffsets, apply_offsets, forward_jacobians
from .raster import RasterSettings, render_soft_silhouette, soft_silhouette_backward


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # silhouette
    lambda2: float = 1.0  # vertex offsets
    lambda3: float = 1.0  # normal consistency
    lambda4: float = 1.0  # laplacian
    lambda5: float = 0.1  # edge length

    def __post_init__(self):
        if any(w < 0 for w in self.as_tuple()):
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)


@dataclass(frozen=True)
class LossBreakdown:
    sil: float
    v: float
    n: float
    lap: float
    edge: float
    total: float

    @classmethod
    def compose(cls, weights: LossWeights, sil, v, n, lap, edge) -> "LossBreakdown":
        l1, l2, l3, l4, l5 = weights.as_tuple()
        total = l1 * sil + l2 * v + l3 * n + l4 * lap + l5 * edge
        return cls(float(sil), float(v), float(n), float(lap), float(edge), float(total))


@dataclass(eq=False)
class View:
    """One camera view of the refined mesh.

    The mesh is rotated by ``rotation`` about the fixed ``pivot`` before
    projection; identity for the reference (right / mono) view.
    """

    target: np.ndarray
    camera: WeakPerspectiveCamera
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def place(self, vertices):
        if np.array_equal(self.rotation, np.eye(3)):
            return vertices
        return (vertices - self.pivot) @ self.rotation.T + self.pivot


# ---------------------------------------------------------------------------
# mesh topology


class MeshTopology:
    def __init__(self, faces: np.ndarray, num_vertices: int):
        faces = np.asarray(faces, dtype=np.int64)
        self.faces = faces
        directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        self.edges, inverse, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        face_of = np.tile(np.arange(faces.shape[0]), 3)
        interior = np.flatnonzero(counts == 2)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        first = face_of[order[starts[interior]]]
        second = face_of[order[starts[interior] + 1]]
        self.interior_faces = np.stack([first, second], axis=1)

        n = num_vertices
        i, j = self.edges.T
        adj = sp.coo_matrix((np.ones(2 * i.size), (np.concatenate([i, j]), np.concatenate([j, i]))),
                            shape=(n, n)).tocsr()
        deg = np.asarray(adj.sum(axis=1)).ravel()
        inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
        # isolated vertices get a zero row
        ident = sp.diags((deg > 0).astype(np.float64))
        self.laplacian = (ident - sp.diags(inv_deg) @ adj).tocsr()


@lru_cache(maxsize=16)
def _topology_cached(faces_bytes: bytes, shape: tuple, num_vertices: int) -> MeshTopology:
    return MeshTopology(np.frombuffer(faces_bytes, dtype=np.int64).reshape(shape), num_vertices)


def topology(faces, num_vertices: int) -> MeshTopology:
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    return _topology_cached(faces.tobytes(), faces.shape, num_vertices)


# ---------------------------------------------------------------------------
# component losses


def silhouette_loss(rendered, target) -> float:
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"silhouette size mismatch: {rendered.shape} vs {target.shape}")
    return float(np.mean((rendered - target) ** 2))


def vertex_offset_loss(d_vertices) -> float:
    return float(np.sum(np.square(d_vertices)))


def edge_loss(mesh, grad: bool = False):
    """Squared edge lengths summed over ordered neighbor pairs."""
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    topo = topology(mesh.faces, verts.shape[0])
    i, j = topo.edges.T
    diff = verts[i] - verts[j]
    value = 2.0 * float(np.sum(diff * diff))
    if not grad:
        return value
    g = np.zeros_like(verts)
    np.add.at(g, i, 4.0 * diff)
    np.add.at(g, j, -4.0 * diff)
    return value, g


def laplacian_loss(mesh, grad: bool = False):
    """Sum of squared uniform-weight Laplacian coordinates."""
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    L = topology(mesh.faces, verts.shape[0]).laplacian
    delta = L @ verts
    value = float(np.sum(delta * delta))
    if not grad:
        return value
    return value, 2.0 * (L.T @ delta)


def normal_loss(mesh, grad: bool = False):
    """Sum over interior edges of one minus the cosine between adjacent face normals."""
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    topo = topology(faces, verts.shape[0])
    tri = verts[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    normals = np.cross(e1, e2)
    norms = np.linalg.norm(normals, axis=1)
    fl, fr = topo.interior_faces.T
    ok = (norms[fl] > 1e-20) & (norms[fr] > 1e-20)
    fl, fr = fl[ok], fr[ok]
    nl, nr = normals[fl], normals[fr]
    ll, lr = norms[fl], norms[fr]
    cos = np.einsum("ij,ij->i", nl, nr) / (ll * lr)
    value = float(np.sum(1.0 - cos))
    if not grad:
        return value
    # d(1 - cos)/dn_l = -(n_r / (|l||r|) - cos n_l / |l|^2)
    g_nl = -(nr / (ll * lr)[:, None] - (cos / ll ** 2)[:, None] * nl)
    g_nr = -(nl / (ll * lr)[:, None] - (cos / lr ** 2)[:, None] * nr)
    g_normals = np.zeros_like(normals)
    np.add.at(g_normals, fl, g_nl)
    np.add.at(g_normals, fr, g_nr)
    gb = np.cross(e2, g_normals)
    gc = np.cross(g_normals, e1)
    g = np.zeros_like(verts)
    np.add.at(g, faces[:, 0], -(gb + gc))
    np.add.at(g, faces[:, 1], gb)
    np.add.at(g, faces[:, 2], gc)
    return value, g


# ---------------------------------------------------------------------------
# total loss and gradient

Views = Union[View, Sequence[View]]


def _as_views(views: Views) -> list:
    views = [views] if isinstance(views, View) else list(views)
    if len(views) not in (1, 2):
        raise ValueError("expected one (mono) or two (stereo) views")
    return views


REDUCTIONS = ("mean", "sum")


def _regularizer_scales(model, reduction):
    """Divisors for the (normal, laplacian, edge) terms: element counts or 1."""
    if reduction == "sum":
        return 1.0, 1.0, 1.0
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")
    topo = topology(model.faces, model.num_vertices)
    return (float(max(len(topo.interior_faces), 1)), float(model.num_vertices),
            float(max(2 * len(topo.edges), 1)))


def _evaluate(model, params, offsets, views, weights, settings, with_grad, reduction="mean"):
    views = _as_views(views)
    params.check(model)
    offsets.check(model)
    pose = params.pose + offsets.d_pose
    shape = params.shape + offsets.d_shape
    if with_grad:
        skinned, jac_pose, jac_shape = forward_jacobians(model, pose, shape)
        verts = skinned + offsets.d_vertices
    else:
        verts = apply_offsets(model, params, offsets).vertices
    mesh = _Mesh(verts, model.faces)

    l1, l2, l3, l4, l5 = weights.as_tuple()
    g_verts = np.zeros_like(verts)
    g_cam = np.zeros(3)
    sil_terms = []
    for view in views:
        cam = view.camera.offset(offsets.d_camera)
        placed = view.place(verts)
        v2d = project(cam, placed)
        rendered = render_soft_silhouette(v2d, model.faces, settings)
        if rendered.shape != np.shape(view.target):
            raise ValueError(f"target size {np.shape(view.target)} does not match render {rendered.shape}")
        sil_terms.append(silhouette_loss(rendered, view.target))
        if with_grad and l1 != 0.0:
            upstream = (l1 / len(views)) * 2.0 * (rendered - view.target) / rendered.size
            g2d = soft_silhouette_backward(v2d, model.faces, settings, upstream)
            g_cam[:2] += g2d.sum(axis=0)
            g_cam[2] += np.sum(g2d * placed[:, :2])
            g_placed = np.zeros_like(verts)
            g_placed[:, :2] = cam.delta * g2d
            g_verts += g_placed @ view.rotation
    sil = sum(sil_terms) / len(sil_terms)

    lv = vertex_offset_loss(offsets.d_vertices)
    kn, klap, ke = _regularizer_scales(model, reduction)
    if with_grad:
        ln, gn = normal_loss(mesh, grad=True)
        llap, glap = laplacian_loss(mesh, grad=True)
        le, ge = edge_loss(mesh, grad=True)
        ln, gn, llap, glap, le, ge = ln / kn, gn / kn, llap / klap, glap / klap, le / ke, ge / ke
    else:
        ln, llap, le = normal_loss(mesh) / kn, laplacian_loss(mesh) / klap, edge_loss(mesh) / ke
    breakdown = LossBreakdown.compose(weights, sil, lv, ln, llap, le)
    if not with_grad:
        return breakdown, None

    g_verts = g_verts + l3 * gn + l4 * glap + l5 * ge
    gradient = ParamOffsets(
        d_pose=np.einsum("va,vak->k", g_verts, jac_pose),
        d_shape=np.einsum("va,vak->k", g_verts, jac_shape),
        d_vertices=g_verts + 2.0 * l2 * offsets.d_vertices,
        d_camera=g_cam,
    )
    return breakdown, gradient


@dataclass
class _Mesh:
    vertices: np.ndarray
    faces: np.ndarray


def total_loss(model: HandModelData, params: HandParams, offsets: ParamOffsets, views: Views,
               weights: LossWeights = LossWeights(), settings: RasterSettings = None,
               reduction: str = "mean") -> LossBreakdown:
    """Weighted refinement loss on the offset mesh.

    With two views the silhouette term is the mean of the per-view terms.
    ``reduction="mean"`` divides the normal, Laplacian and edge terms by
    their element counts (interior edges, vertices, ordered neighbor
    pairs); ``"sum"`` uses the raw sums.  The vertex-offset term is always
    a plain sum of squares.
    """
    settings = settings or _default_settings(views)
    return _evaluate(model, params, offsets, views, weights, settings, False, reduction)[0]


def loss_gradient(model: HandModelData, params: HandParams, offsets: ParamOffsets, views: Views,
                  weights: LossWeights = LossWeights(), settings: RasterSettings = None,
                  reduction: str = "mean"):
    """Returns ``(LossBreakdown, gradient)``; the gradient has ParamOffsets layout."""
    settings = settings or _default_settings(views)
    return _evaluate(model, params, offsets, views, weights, settings, True, reduction)


def _default_settings(views) -> RasterSettings:
    h, w = np.shape(_as_views(views)[0].target)
    return RasterSettings(w, h)
