"""Linear-blend-skinned hand model: data container, toy generator, forward pass.

The model is pure LBS plus a linear shape space.  Poses are axis-angle
blocks, block 0 being the global rotation about rest joint 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import WeakPerspectiveCamera

NUM_JOINTS = 16
NUM_SHAPE = 10
WEIGHT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class HandModelData:
    template_vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray  # (F, 3) int, CCW = outward
    shape_basis: np.ndarray  # (S, V, 3)
    joint_regressor: np.ndarray  # (J, V)
    skin_weights: np.ndarray  # (V, J)
    parents: np.ndarray  # (J,) int, parents[0] == -1
    fingertip_vertex_ids: np.ndarray  # (5,) int
    uv: Optional[np.ndarray] = None  # (F, 3, 2) optional stored atlas
    pose_basis: Optional[np.ndarray] = None  # reserved, ignored by forward

    def __post_init__(self):
        for name in ("template_vertices", "shape_basis", "joint_regressor", "skin_weights"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("faces", "parents", "fingertip_vertex_ids"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.uv is not None:
            uv = np.array(self.uv, dtype=np.float64)
            uv.setflags(write=False)
            object.__setattr__(self, "uv", uv)
        validate_model(self)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def num_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def pose_dim(self) -> int:
        return 3 * self.num_joints


def validate_model(m: HandModelData) -> None:
    """Raise ValueError if any structural invariant of the model is broken."""
    T = m.template_vertices
    if T.ndim != 2 or T.shape[1] != 3:
        raise ValueError(f"template: expected (V, 3), got {T.shape}")
    V = T.shape[0]
    if m.faces.ndim != 2 or m.faces.shape[1] != 3 or m.faces.shape[0] == 0:
        raise ValueError(f"faces: expected (F, 3), got {m.faces.shape}")
    if m.faces.min() < 0 or m.faces.max() >= V:
        raise ValueError("faces: vertex index out of range")
    if np.unique(m.faces).size != V:
        raise ValueError("faces: some vertices are not referenced by any face")
    J = m.parents.shape[0]
    if m.parents.ndim != 1 or J == 0:
        raise ValueError("parents: expected a non-empty 1-D array")
    if m.parents[0] != -1:
        raise ValueError("invalid parent index: joint 0 must be the root")
    for j in range(1, J):
        if not 0 <= m.parents[j] < j:
            raise ValueError(f"invalid parent index: joint {j} has parent {m.parents[j]}")
    if m.shape_basis.ndim != 3 or m.shape_basis.shape[1:] != (V, 3):
        raise ValueError(f"shape_basis: expected (S, {V}, 3), got {m.shape_basis.shape}")
    if m.joint_regressor.shape != (J, V):
        raise ValueError(f"joint_regressor: expected ({J}, {V}), got {m.joint_regressor.shape}")
    if m.skin_weights.shape != (V, J):
        raise ValueError(f"skin_weights: expected ({V}, {J}), got {m.skin_weights.shape}")
    for name in ("template_vertices", "shape_basis", "joint_regressor", "skin_weights"):
        if not np.all(np.isfinite(getattr(m, name))):
            raise ValueError(f"{name}: non-finite entries")
    if np.any(m.skin_weights < 0):
        raise ValueError("skin_weights: negative entries")
    bad = np.flatnonzero(np.abs(m.skin_weights.sum(axis=1) - 1.0) > WEIGHT_TOL)
    if bad.size:
        raise ValueError(f"skin_weights: weights not normalized (row {bad[0]})")
    bad = np.flatnonzero(np.abs(m.joint_regressor.sum(axis=1) - 1.0) > WEIGHT_TOL)
    if bad.size:
        raise ValueError(f"joint_regressor: weights not normalized (row {bad[0]})")
    if m.fingertip_vertex_ids.shape != (5,):
        raise ValueError("fingertips: expected 5 vertex indices")
    if m.fingertip_vertex_ids.min() < 0 or m.fingertip_vertex_ids.max() >= V:
        raise ValueError("fingertips: vertex index out of range")
    if m.uv is not None and m.uv.shape != (m.faces.shape[0], 3, 2):
        raise ValueError(f"uv: expected ({m.faces.shape[0]}, 3, 2), got {m.uv.shape}")


@dataclass
class HandParams:
    pose: np.ndarray
    shape: np.ndarray
    camera: WeakPerspectiveCamera

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(-1)
        self.shape = np.asarray(self.shape, dtype=np.float64).reshape(-1)

    def check(self, model: HandModelData) -> None:
        if self.pose.shape != (model.pose_dim,):
            raise ValueError(f"pose: expected {model.pose_dim} entries, got {self.pose.size}")
        if self.shape.shape != (model.num_shape,):
            raise ValueError(f"shape: expected {model.num_shape} entries, got {self.shape.size}")


@dataclass
class ParamOffsets:
    d_pose: np.ndarray
    d_shape: np.ndarray
    d_vertices: np.ndarray
    d_camera: np.ndarray  # (dt_x, dt_y, d_delta)

    @classmethod
    def zeros(cls, model: HandModelData) -> "ParamOffsets":
        return cls(
            np.zeros(model.pose_dim),
            np.zeros(model.num_shape),
            np.zeros((model.num_vertices, 3)),
            np.zeros(3),
        )

    def check(self, model: HandModelData) -> None:
        expected = {
            "d_pose": (model.pose_dim,),
            "d_shape": (model.num_shape,),
            "d_vertices": (model.num_vertices, 3),
            "d_camera": (3,),
        }
        for name, shp in expected.items():
            arr = getattr(self, name)
            if np.shape(arr) != shp:
                raise ValueError(f"{name}: dimension mismatch, expected {shp}, got {np.shape(arr)}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")

    def blocks(self):
        return (("d_pose", self.d_pose), ("d_shape", self.d_shape),
                ("d_vertices", self.d_vertices), ("d_camera", self.d_camera))

    def copy(self) -> "ParamOffsets":
        return ParamOffsets(*(np.array(a, dtype=np.float64) for _, a in self.blocks()))

    def scaled_add(self, other: "ParamOffsets", a: float = 1.0, b: float = 1.0) -> "ParamOffsets":
        """Return ``a * self + b * other``."""
        return ParamOffsets(*(a * x + b * y for (_, x), (_, y) in zip(self.blocks(), other.blocks())))


@dataclass
class PosedMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray
    joints3d: np.ndarray  # (J + 5, 3)


@dataclass
class _Kinematics:
    """Intermediate quantities of one forward pass, reused by the Jacobians."""
    shaped: np.ndarray  # (V, 3)
    rest_joints: np.ndarray  # (J, 3)
    local_rot: np.ndarray  # (J, 3, 3)
    world_rot: np.ndarray  # (J, 3, 3)
    posed_joints: np.ndarray  # (J, 3)
    per_joint_disp: np.ndarray  # (V, J, 3): displacement of each vertex moved rigidly by joint j

    @property
    def per_joint_verts(self) -> np.ndarray:
        return self.shaped[:, None, :] + self.per_joint_disp


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Axis-angle to rotation matrix; exactly the identity for a zero vector."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(rotvec))
    if theta == 0.0:
        return np.eye(3)
    K = skew(rotvec / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_to_rotvec(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(R).as_rotvec()


def rodrigues_angular_rates(rotvec: np.ndarray) -> np.ndarray:
    """Rows w_i with dR/d(rotvec_i) = [w_i]x R (left angular rates)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta2 = float(rotvec @ rotvec)
    if theta2 < 1e-16:
        # first-order series: w_i = e_i + 0.5 * [rotvec]x e_i
        return np.eye(3) + 0.5 * skew(rotvec).T
    R = rodrigues(rotvec)
    eye = np.eye(3)
    rates = np.empty((3, 3))
    for i in range(3):
        rates[i] = (rotvec[i] * rotvec + np.cross(rotvec, (eye - R)[:, i])) / theta2
    return rates


def _kinematics(model: HandModelData, pose: np.ndarray, shape: np.ndarray) -> _Kinematics:
    pose = np.asarray(pose, dtype=np.float64).reshape(-1)
    shape = np.asarray(shape, dtype=np.float64).reshape(-1)
    if pose.shape != (model.pose_dim,):
        raise ValueError(f"pose: expected {model.pose_dim} entries, got {pose.size}")
    if shape.shape != (model.num_shape,):
        raise ValueError(f"shape: expected {model.num_shape} entries, got {shape.size}")
    if not (np.all(np.isfinite(pose)) and np.all(np.isfinite(shape))):
        raise ValueError("non-finite pose or shape")

    shaped = model.template_vertices + np.tensordot(shape, model.shape_basis, axes=1)
    rest = model.joint_regressor @ shaped
    J = model.num_joints
    local = np.stack([rodrigues(pose[3 * j:3 * j + 3]) for j in range(J)])
    world = np.empty_like(local)
    # joint displacements are accumulated directly so the identity pose yields exact zeros
    moved = np.zeros_like(rest)
    eye = np.eye(3)
    for j in range(J):
        p = model.parents[j]
        if p < 0:
            world[j] = local[j]
        else:
            world[j] = world[p] @ local[j]
            moved[j] = moved[p] + (world[p] - eye) @ (rest[j] - rest[p])
    posed = rest + moved
    # disp[v, j] = (world[j] - I) (shaped[v] - rest[j]) + (posed[j] - rest[j])
    rel = shaped[:, None, :] - rest[None, :, :]
    disp = np.einsum("jab,vjb->vja", world - eye, rel) + moved[None]
    return _Kinematics(shaped, rest, local, world, posed, disp)


def _skin(model: HandModelData, kin: _Kinematics) -> np.ndarray:
    # displacement form keeps the identity pose bit-exact
    return kin.shaped + np.einsum("vj,vja->va", model.skin_weights, kin.per_joint_disp)


def forward(model: HandModelData, pose, shape) -> PosedMesh:
    kin = _kinematics(model, pose, shape)
    verts = _skin(model, kin)
    joints = np.concatenate([kin.posed_joints, verts[model.fingertip_vertex_ids]], axis=0)
    return PosedMesh(verts, model.faces, joints)


def apply_offsets(model: HandModelData, params: HandParams, offsets: ParamOffsets) -> PosedMesh:
    """The refined mesh ``M(p + dp, s + ds) + dv``; joints ignore ``dv``."""
    params.check(model)
    offsets.check(model)
    mesh = forward(model, params.pose + offsets.d_pose, params.shape + offsets.d_shape)
    return PosedMesh(mesh.vertices + offsets.d_vertices, mesh.faces, mesh.joints3d)


def _subtrees(parents: np.ndarray) -> np.ndarray:
    """Boolean (J, J) matrix: sub[k, j] is True when j is k or a descendant of k."""
    J = parents.shape[0]
    sub = np.eye(J, dtype=bool)
    for j in range(J - 1, 0, -1):
        sub[parents[j]] |= sub[j]
    return sub


def forward_jacobians(model: HandModelData, pose, shape):
    """Analytic Jacobians of the skinned vertices.

    Returns ``(vertices, d_pose, d_shape)`` with ``d_pose`` of shape
    (V, 3, pose_dim) and ``d_shape`` of shape (V, 3, S).
    """
    kin = _kinematics(model, pose, shape)
    verts = _skin(model, kin)
    W = model.skin_weights
    J = model.num_joints
    V = model.num_vertices
    sub = _subtrees(model.parents)
    pose = np.asarray(pose, dtype=np.float64).reshape(-1)

    d_pose = np.empty((V, 3, 3 * J))
    weighted = W[:, :, None] * kin.per_joint_verts  # (V, J, 3)
    for k in range(J):
        mask = sub[k]
        lever = weighted[:, mask].sum(axis=1) - W[:, mask].sum(axis=1)[:, None] * kin.posed_joints[k]
        p = model.parents[k]
        frame = kin.world_rot[p] if p >= 0 else np.eye(3)
        omegas = rodrigues_angular_rates(pose[3 * k:3 * k + 3]) @ frame.T  # rows: world rates
        for a in range(3):
            d_pose[:, :, 3 * k + a] = np.cross(omegas[a], lever)

    B = model.shape_basis  # (S, V, 3)
    dJ = np.einsum("jv,sva->sja", model.joint_regressor, B)
    dP = np.empty_like(dJ)
    for j in range(J):
        p = model.parents[j]
        if p < 0:
            dP[:, j] = dJ[:, j]
        else:
            dP[:, j] = dP[:, p] + (dJ[:, j] - dJ[:, p]) @ kin.world_rot[p].T
    blend_rot = np.einsum("vj,jab->vab", W, kin.world_rot)
    offset = dP - np.einsum("jab,sjb->sja", kin.world_rot, dJ)
    d_shape = np.einsum("vab,svb->vas", blend_rot, B) + np.einsum("vj,sja->vas", W, offset)
    return verts, d_pose, d_shape


# ---------------------------------------------------------------------------
# toy model generator


def _orient(faces, verts, outward_hints):
    """Flip faces whose geometric normal disagrees with the outward hint."""
    out = []
    for f, hint in zip(faces, outward_hints):
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        n = np.cross(b - a, c - a)
        out.append(f if n @ hint > 0 else [f[0], f[2], f[1]])
    return out


def _segment_distance(points, a, b):
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def toy_model(seed: int = 0, finger_segments: int = 2) -> HandModelData:
    """Build a deterministic low-poly right hand with MANO-compatible dimensions.

    The palm is a box whose top face carries four finger stubs and whose
    side face carries the thumb.  Each finger is a chain of three bones,
    each bone split into ``finger_segments`` rings of four vertices.
    """
    if finger_segments < 2:
        raise ValueError("finger_segments must be >= 2")
    rng = np.random.default_rng(seed)

    # palm lattice; fingers extend toward -y (up in a y-down image)
    xs = np.array([-0.0435, -0.0405, -0.0235, -0.0205, -0.0015, 0.0015,
                   0.0195, 0.0225, 0.0385, 0.0415])
    ys = np.array([0.0, 0.03, 0.06, 0.09])
    zs = np.array([-0.011, 0.011])
    nx, ny, nz = len(xs), len(ys), len(zs)
    index = {}
    verts = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if i in (0, nx - 1) or j in (0, ny - 1) or k in (0, nz - 1):
                    index[(i, j, k)] = len(verts)
                    verts.append([xs[i], ys[j], zs[k]])
    palm_center = np.array([0.0, 0.045, 0.0])

    quads = []  # (corner ids in cyclic order, outward direction, tag)
    for i in range(nx - 1):
        for k in range(nz - 1):
            for j, sgn in ((0, -1.0), (ny - 1, 1.0)):
                q = [index[(i, j, k)], index[(i + 1, j, k)], index[(i + 1, j, k + 1)], index[(i, j, k + 1)]]
                quads.append((q, np.array([0.0, sgn, 0.0]), ("top", i) if j == 0 else None))
    for i in range(nx - 1):
        for j in range(ny - 1):
            for k, sgn in ((0, -1.0), (nz - 1, 1.0)):
                q = [index[(i, j, k)], index[(i + 1, j, k)], index[(i + 1, j + 1, k)], index[(i, j + 1, k)]]
                quads.append((q, np.array([0.0, 0.0, sgn]), None))
    for j in range(ny - 1):
        for k in range(nz - 1):
            for i, sgn in ((0, -1.0), (nx - 1, 1.0)):
                q = [index[(i, j, k)], index[(i, j + 1, k)], index[(i, j + 1, k + 1)], index[(i, j, k + 1)]]
                quads.append((q, np.array([sgn, 0.0, 0.0]), ("side", j) if i == nx - 1 else None))

    # finger name order follows MANO: index, middle, pinky, ring, thumb
    finger_specs = [
        (("top", 7), np.array([0.0, -1.0, 0.0]), (0.040, 0.025, 0.020)),
        (("top", 5), np.array([0.0, -1.0, 0.0]), (0.044, 0.028, 0.022)),
        (("top", 1), np.array([0.0, -1.0, 0.0]), (0.030, 0.020, 0.017)),
        (("top", 3), np.array([0.0, -1.0, 0.0]), (0.040, 0.026, 0.020)),
        (("side", 1), np.array([0.8, -0.6, 0.0]), (0.035, 0.030, 0.024)),
    ]
    by_tag = {q[2]: q for q in quads if q[2] is not None}
    extruded = {spec[0] for spec in finger_specs}

    tris, hints = [], []
    for q, out, tag in quads:
        if tag in extruded:
            continue
        ids = q
        tris += [[ids[0], ids[1], ids[2]], [ids[0], ids[2], ids[3]]]
        hints += [out, out]

    verts = [np.asarray(v, dtype=np.float64) for v in verts]
    joint_rings = []  # per joint 1..15: vertex ids of the ring at the bone base
    bone_segments = [(np.array([0.0, 0.09, 0.0]), np.array([0.0, 0.0, 0.0]))]
    tip_ids = []
    for tag, direction, lengths in finger_specs:
        direction = direction / np.linalg.norm(direction)
        ring = list(by_tag[tag][0])
        center = np.mean([verts[r] for r in ring], axis=0)
        for length in lengths:
            joint_rings.append(list(ring))
            start = center.copy()
            step = length / finger_segments
            for _ in range(finger_segments):
                new_center = center + step * direction
                new_ring = []
                for r in ring:
                    offset = (verts[r] - center) * 0.96
                    new_ring.append(len(verts))
                    verts.append(new_center + offset)
                for a in range(4):
                    b = (a + 1) % 4
                    mid = 0.25 * sum(verts[x] for x in (ring[a], ring[b], new_ring[a], new_ring[b]))
                    hint = mid - 0.5 * (center + new_center)
                    tris += [[ring[a], ring[b], new_ring[b]], [ring[a], new_ring[b], new_ring[a]]]
                    hints += [hint, hint]
                ring, center = new_ring, new_center
            bone_segments.append((start, center.copy()))
        tip = len(verts)
        verts.append(center + 0.006 * direction)
        tip_ids.append(tip)
        for a in range(4):
            tris.append([ring[a], ring[(a + 1) % 4], tip])
            hints.append(direction)

    V = np.array(verts)
    F = np.array(_orient(tris, V, hints), dtype=np.int64)
    nv = V.shape[0]

    # joint 0 regresses from all palm vertices, finger joints from their base ring
    J = NUM_JOINTS
    regressor = np.zeros((J, nv))
    n_palm = len(index)
    regressor[0, :n_palm] = 1.0 / n_palm
    for j, ring in enumerate(joint_rings, start=1):
        regressor[j, ring] = 0.25
    parents = np.array([-1] + [0 if (j - 1) % 3 == 0 else j - 1 for j in range(1, J)])

    dists = np.stack([_segment_distance(V, a, b) for a, b in bone_segments], axis=1)
    nearest = np.argsort(dists, axis=1, kind="stable")[:, :2]
    weights = np.zeros((nv, J))
    rows = np.arange(nv)[:, None]
    weights[rows, nearest] = 1.0 / (dists[rows, nearest] ** 2 + 1e-10)
    weights /= weights.sum(axis=1, keepdims=True)

    # smooth shape space: random quadratic fields, orthogonalized
    scaled = (V - palm_center) / 0.05
    x, y, z = scaled.T
    feats = np.stack([np.ones(nv), x, y, z, x * x, y * y, z * z, x * y, y * z, x * z], axis=1)
    raw = np.stack([(feats @ rng.standard_normal((feats.shape[1], 3))).reshape(-1)
                    for _ in range(NUM_SHAPE)], axis=1)
    q, _ = np.linalg.qr(raw)
    basis = (q * (0.002 * np.sqrt(nv))).T.reshape(NUM_SHAPE, nv, 3)

    return HandModelData(
        template_vertices=V,
        faces=F,
        shape_basis=basis,
        joint_regressor=regressor,
        skin_weights=weights,
        parents=parents,
        fingertip_vertex_ids=np.array(tip_ids),
    )
