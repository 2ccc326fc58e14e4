"""Readers and writers: JSON documents (model, params, rig, weights, config),
binary PNM images (P5/P6), minimal OBJ meshes and point files.

Every reader validates the invariants of the type it builds and names the
offending key on failure.  Floats are written with ``repr`` precision so
write -> read round trips are exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .camera import StereoRig, WeakPerspectiveCamera
from .hand_model import HandModelData, HandParams
from .losses import LossWeights
from .refine import RefineConfig
from .stereo import StereoWeights


class FormatError(ValueError):
    """Malformed or invalid input file."""


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed document ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


def _dump_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _array(doc, key, path, shape=None, dtype=np.float64, optional=False):
    if key not in doc:
        if optional:
            return None
        raise FormatError(f"{path}: missing key '{key}'")
    try:
        arr = np.array(doc[key], dtype=dtype)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: key '{key}' is not a numeric array") from None
    if shape is not None:
        if arr.ndim != len(shape) or any(s is not None and s != a for s, a in zip(shape, arr.shape)):
            raise FormatError(f"{path}: key '{key}' has shape {arr.shape}, expected {shape}")
    if dtype == np.float64 and not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: key '{key}' has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# hand model


def model_to_dict(model: HandModelData) -> dict:
    doc = {
        "template": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "parents": [None if p < 0 else int(p) for p in model.parents],
        "fingertips": model.fingertip_vertex_ids.tolist(),
    }
    if model.uv is not None:
        doc["uv"] = model.uv.tolist()
    if model.pose_basis is not None:
        doc["pose_basis"] = np.asarray(model.pose_basis).tolist()
    return doc


def write_model(path, model: HandModelData) -> None:
    _dump_json(path, model_to_dict(model))


def read_model(path) -> HandModelData:
    doc = _load_json(path)
    parents = doc.get("parents")
    if not isinstance(parents, list) or not parents:
        raise FormatError(f"{path}: key 'parents' must be a non-empty list")
    try:
        parents = np.array([-1 if p is None else int(p) for p in parents], dtype=np.int64)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: key 'parents' must hold integers or null") from None
    try:
        return HandModelData(
            template_vertices=_array(doc, "template", path, (None, 3)),
            faces=_array(doc, "faces", path, (None, 3), np.int64),
            shape_basis=_array(doc, "shape_basis", path, (None, None, 3)),
            joint_regressor=_array(doc, "joint_regressor", path, (None, None)),
            skin_weights=_array(doc, "skin_weights", path, (None, None)),
            parents=parents,
            fingertip_vertex_ids=_array(doc, "fingertips", path, (5,), np.int64),
            uv=_array(doc, "uv", path, (None, 3, 2), optional=True),
            pose_basis=_array(doc, "pose_basis", path, optional=True),
        )
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


load_model = read_model


# ---------------------------------------------------------------------------
# params, rig, weights


def params_to_dict(params: HandParams) -> dict:
    return {
        "pose": [float(x) for x in params.pose],
        "shape": [float(x) for x in params.shape],
        "camera": {"t": [float(x) for x in params.camera.t], "scale": float(params.camera.delta)},
    }


def write_params(path, params: HandParams) -> None:
    _dump_json(path, params_to_dict(params))


def read_params(path, model: Optional[HandModelData] = None) -> HandParams:
    doc = _load_json(path)
    pose = _array(doc, "pose", path, (None,))
    shape = _array(doc, "shape", path, (None,))
    cam = doc.get("camera")
    if not isinstance(cam, dict):
        raise FormatError(f"{path}: missing object 'camera'")
    t = _array(cam, "t", f"{path}: camera", (2,))
    scale = _array(cam, "scale", f"{path}: camera", ())
    try:
        params = HandParams(pose, shape, WeakPerspectiveCamera(tuple(t), float(scale)))
        if model is not None:
            params.check(model)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return params


def write_rig(path, rig: StereoRig) -> None:
    _dump_json(path, {
        "rotation": [float(x) for x in rig.rotation.reshape(-1)],
        "translation": [float(x) for x in rig.translation],
        "focal": float(rig.focal),
        "principal_point": [float(x) for x in rig.principal_point],
    })


def read_rig(path) -> StereoRig:
    doc = _load_json(path)
    rot = _array(doc, "rotation", path, (9,))
    trans = _array(doc, "translation", path, (3,))
    focal = _array(doc, "focal", path, ())
    pp = _array(doc, "principal_point", path, (2,))
    try:
        return StereoRig(rot.reshape(3, 3), trans, float(focal), pp)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_weights(path, w: StereoWeights) -> None:
    _dump_json(path, {"w": [float(x) for x in w.w]})


def read_weights(path, pose_dim: Optional[int] = None) -> StereoWeights:
    doc = _load_json(path)
    w = _array(doc, "w", path, (pose_dim,))
    if np.any(w < 0) or np.any(w > 1):
        i = int(np.flatnonzero((w < 0) | (w > 1))[0])
        raise FormatError(f"{path}: key 'w' entry {i} out of range [0, 1]")
    return StereoWeights(w)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    eta: float = 0.002
    alpha: float = 0.9
    iterations: int = 10
    lambdas: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0, 0.1])
    reduction: str = "mean"
    width: int = 64
    height: int = 64
    sigma: Optional[float] = None
    dist_cutoff: float = 8.0
    threads: int = 1
    warm_start: bool = False
    slerp_blend: bool = False
    texture_beta: float = 0.7
    texture_resolution: int = 512
    paths: dict = field(default_factory=dict)

    def loss_weights(self) -> LossWeights:
        return LossWeights(*self.lambdas)

    def refine_config(self, iterations: Optional[int] = None) -> RefineConfig:
        return RefineConfig(
            eta=self.eta, alpha=self.alpha,
            iterations=self.iterations if iterations is None else iterations,
            weights=self.loss_weights(), sigma=self.sigma, dist_cutoff=self.dist_cutoff,
            threads=self.threads, warm_start=self.warm_start, reduction=self.reduction,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def write_config(path, cfg: RunConfig) -> None:
    _dump_json(path, cfg.to_dict())


def read_config(path) -> RunConfig:
    doc = _load_json(path)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise FormatError(f"{path}: unknown config key '{unknown[0]}'")
    cfg = RunConfig(**doc)
    if len(cfg.lambdas) != 5:
        raise FormatError(f"{path}: key 'lambdas' must hold 5 weights")
    try:
        cfg.refine_config()
        LossWeights(*cfg.lambdas)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if not 0.0 <= cfg.texture_beta <= 1.0:
        raise FormatError(f"{path}: key 'texture_beta' out of range [0, 1]")
    return cfg


# ---------------------------------------------------------------------------
# PNM images


def _read_token(data: bytes, pos: int):
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary P5 (H, W) or P6 (H, W, 3) image as uint8."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: malformed header, expected P5 or P6 magic")
    vals = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"{path}: malformed header field '{name}'")
        vals.append(int(tok))
    width, height, maxval = vals
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    body = data[pos:pos + n]
    if len(body) != n:
        raise FormatError(f"{path}: truncated pixel data ({len(body)} of {n} bytes)")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(height, width) if channels == 1 else arr.reshape(height, width, 3)


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError("write_pnm expects uint8 data")
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"unsupported image shape {image.shape}")
    h, w = image.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image).tobytes())


def to_uint8(values) -> np.ndarray:
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_silhouette(path, sil) -> None:
    write_pnm(path, to_uint8(sil))


def read_silhouette(path) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 2:
        raise FormatError(f"{path}: expected a P5 graymap")
    return img.astype(np.float64) / 255.0


def read_rgb(path) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 3:
        raise FormatError(f"{path}: expected a P6 pixmap")
    return img.astype(np.float64) / 255.0


def write_texture(path, texture) -> Path:
    """Write ``path`` (P6 colors) and ``<stem>.w.pgm`` (weights, clipped to 255)."""
    path = Path(path)
    write_pnm(path, to_uint8(texture.rgb))
    wpath = path.with_name(path.stem + ".w.pgm")
    write_pnm(wpath, np.clip(np.round(texture.weight), 0, 255).astype(np.uint8))
    return wpath


def read_texture(path):
    from .texture import TextureMap

    path = Path(path)
    rgb = read_rgb(path)
    wpath = path.with_name(path.stem + ".w.pgm")
    weight = read_pnm(wpath).astype(np.float64) if wpath.exists() else (rgb.sum(axis=2) > 0).astype(np.float64)
    if weight.shape != rgb.shape[:2]:
        raise FormatError(f"{wpath}: size does not match {path}")
    return TextureMap(rgb, weight)


# ---------------------------------------------------------------------------
# meshes and point sets


def write_obj(path, vertices, faces, uv=None) -> None:
    """``v``/``f`` lines with 1-based indices; per-corner ``vt`` when uv is given."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=np.float64).tolist()]
    faces = np.asarray(faces, dtype=np.int64)
    if uv is None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces.tolist()]
    else:
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        lines += [f"vt {u!r} {v!r}" for u, v in uv.tolist()]
        for i, (a, b, c) in enumerate(faces.tolist()):
            t = 3 * i + 1
            lines.append(f"f {a + 1}/{t} {b + 1}/{t + 1} {c + 1}/{t + 2}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obj(path):
    """Returns ``(vertices, faces, uv_or_None)``; uv is per face corner."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    verts, faces, tex, face_tex = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                tex.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError("only triangles are supported")
                corners = [p.split("/") for p in parts[1:]]
                faces.append([int(c[0]) - 1 for c in corners])
                if len(corners[0]) > 1 and corners[0][1]:
                    face_tex.append([int(c[1]) - 1 for c in corners])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if F.size and (F.min() < 0 or F.max() >= len(V)):
        raise FormatError(f"{path}: face index out of range")
    uv = None
    if face_tex:
        uv = np.array(tex, dtype=np.float64)[np.array(face_tex)]
    return V, F, uv


def read_points(path) -> np.ndarray:
    """Point set from an OBJ (``v`` lines) or a JSON document with key ``points``."""
    if str(path).endswith(".json"):
        return _array(_load_json(path), "points", path, (None, 3))
    return read_obj(path)[0]


def write_points(path, points) -> None:
    if str(path).endswith(".json"):
        _dump_json(path, {"points": np.asarray(points, dtype=np.float64).tolist()})
    else:
        write_obj(path, points, np.zeros((0, 3), dtype=np.int64))
