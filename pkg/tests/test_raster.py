import numpy as np
import pytest
from hypothesis import given, strategies as st

from handrefine.camera import WeakPerspectiveCamera, project
from handrefine.hand_model import PosedMesh, forward
from handrefine.raster import (RasterSettings, rasterize_fragments, render_soft_silhouette,
                               soft_silhouette_backward)

TRI = np.array([[0, 1, 2]])


def pixel_centers(w, h):
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    return np.stack([xs, ys], axis=-1)


def point_in_triangle(p, tri):
    """Brute-force oracle: inside test and distance to the triangle boundary."""
    signs, dists = [], []
    for e in range(3):
        a, b = tri[e], tri[(e + 1) % 3]
        ab, ap = b - a, p - a
        signs.append(ab[0] * ap[..., 1] - ab[1] * ap[..., 0])
        t = np.clip((ap @ ab) / (ab @ ab), 0, 1)
        dists.append(np.linalg.norm(ap - t[..., None] * ab, axis=-1))
    s = np.stack(signs)
    return (np.all(s > 0, axis=0) | np.all(s < 0, axis=0)), np.min(dists, axis=0)


def random_triangle(rng, size):
    while True:
        tri = rng.uniform(-4, size + 4, (3, 2))
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        area = abs(e1[0] * e2[1] - e1[1] * e2[0]) / 2
        if area > 20:
            return tri


def test_zero_faces_is_empty():
    s = render_soft_silhouette(np.zeros((3, 2)), np.zeros((0, 3), dtype=int), RasterSettings(8, 6))
    assert s.shape == (6, 8) and not s.any()


def test_pixel_on_edge_contributes_half():
    # pixel (0, 1) has center (1.5, 0.5), on the edge from (0, 0.5) to (3, 0.5)
    tri = np.array([[0.0, 0.5], [3.0, 0.5], [1.5, 3.0]])
    s = render_soft_silhouette(tri, TRI, RasterSettings(4, 4, sigma=1.0))
    assert s[0, 1] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_sharp_render_matches_point_in_triangle(seed):
    rng = np.random.default_rng(seed)
    tri = random_triangle(rng, 24)
    s = render_soft_silhouette(tri, TRI, RasterSettings(24, 20, sigma=1e-4))
    inside, dist = point_in_triangle(pixel_centers(24, 20), tri)
    far = dist >= 1.0
    assert np.array_equal((s > 0.5)[far], inside[far])


def test_adding_a_triangle_never_decreases(rng):
    tris = np.concatenate([random_triangle(rng, 16), random_triangle(rng, 16)])
    st_ = RasterSettings(16, 16, sigma=0.5)
    one = render_soft_silhouette(tris, TRI, st_)
    two = render_soft_silhouette(tris, np.array([[0, 1, 2], [3, 4, 5]]), st_)
    assert np.all(two >= one) and np.all((two >= 0) & (two <= 1))


def test_zero_upstream_gives_zero_gradient(rng):
    tri = random_triangle(rng, 12)
    g = soft_silhouette_backward(tri, TRI, RasterSettings(12, 12), np.zeros((12, 12)))
    assert g.shape == (3, 2) and not g.any()


def _fd_check(verts, faces, settings, upstream, h):
    g = soft_silhouette_backward(verts, faces, settings, upstream)
    fd = np.zeros_like(verts)
    for i in range(verts.shape[0]):
        for k in range(2):
            vp, vm = verts.copy(), verts.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fd[i, k] = (np.sum(upstream * render_soft_silhouette(vp, faces, settings))
                        - np.sum(upstream * render_soft_silhouette(vm, faces, settings))) / (2 * h)
    return g, fd


def test_single_pixel_gradient_matches_fd():
    tri = np.array([[0.2, 0.1], [0.4, 1.9], [1.8, 0.3]])
    st_ = RasterSettings(1, 1, sigma=0.05)
    g, fd = _fd_check(tri, TRI, st_, np.ones((1, 1)), 1e-4)
    assert np.abs(g).max() > 1e-3
    np.testing.assert_allclose(g, fd, rtol=1e-3, atol=1e-3 * np.abs(fd).max())


@pytest.mark.parametrize("sigma_scale", [1e-2, 1e-4])
def test_mesh_gradient_matches_fd(small_model, rng, sigma_scale):
    pose = rng.normal(0, 0.2, 48)
    v2 = project(WeakPerspectiveCamera((16, 12), 180), forward(small_model, pose, np.zeros(10)).vertices)
    st_ = RasterSettings(32, 32, sigma=sigma_scale * (32 ** 2 + 32 ** 2))
    upstream = rng.normal(size=(32, 32))
    sub = rng.choice(v2.shape[0], 12, replace=False)
    g = soft_silhouette_backward(v2, small_model.faces, st_, upstream)
    h = 1e-5 if sigma_scale < 1e-3 else 1e-4
    for i in sub:
        for k in range(2):
            vp, vm = v2.copy(), v2.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fd = (np.sum(upstream * render_soft_silhouette(vp, small_model.faces, st_))
                  - np.sum(upstream * render_soft_silhouette(vm, small_model.faces, st_))) / (2 * h)
            assert g[i, k] == pytest.approx(fd, rel=1e-3, abs=1e-6)


@given(dx=st.integers(-3, 3), dy=st.integers(-3, 3))
def test_translation_invariance(dx, dy):
    tri = np.array([[8.3, 4.1], [4.2, 12.7], [13.9, 11.2]])
    # the cutoff window stays clear of the border, so rolling the grid never wraps coverage
    up = np.random.default_rng(5).normal(size=(40, 40))
    st_ = RasterSettings(40, 40, sigma=0.3)
    big = soft_silhouette_backward(tri + [12, 12], TRI, st_, up)
    shifted = soft_silhouette_backward(tri + [12 + dx, 12 + dy], TRI, st_, np.roll(up, (dy, dx), axis=(0, 1)))
    np.testing.assert_allclose(shifted, big, atol=1e-12)


def test_threads_are_bit_identical(small_model, rng):
    v2 = project(WeakPerspectiveCamera((32, 24), 350), forward(small_model, rng.normal(0, .2, 48), np.zeros(10)).vertices)
    up = rng.normal(size=(48, 64))
    outs = []
    for threads in (1, 3, 4):
        st_ = RasterSettings(64, 48, threads=threads)
        outs.append((render_soft_silhouette(v2, small_model.faces, st_),
                     soft_silhouette_backward(v2, small_model.faces, st_, up)))
    for s, g in outs[1:]:
        assert np.array_equal(s, outs[0][0]) and np.array_equal(g, outs[0][1])


def _stacked():
    # front-facing in the y-down image; face 1 (z=2) listed first
    xy = np.array([[0.0, 0.0], [0.0, 8.0], [8.0, 0.0]])
    verts = np.concatenate([np.c_[xy, np.full(3, 2.0)], np.c_[xy, np.full(3, 1.0)]])
    return PosedMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]), np.zeros((1, 3)))


def test_fragments_depth_test():
    frag = rasterize_fragments(_stacked(), WeakPerspectiveCamera((0, 0), 1.0), 8, 8)
    assert frag.face_id[1, 1] == 1
    assert frag.depth[1, 1] == pytest.approx(1.0)


def test_fragments_empty_pixel():
    frag = rasterize_fragments(_stacked(), WeakPerspectiveCamera((0, 0), 1.0), 8, 8)
    assert frag.face_id[7, 7] == -1 and np.isinf(frag.depth[7, 7])


def test_fragments_back_faces_culled():
    mesh = _stacked()
    flipped = PosedMesh(mesh.vertices, mesh.faces[:, ::-1], mesh.joints3d)
    assert not rasterize_fragments(flipped, WeakPerspectiveCamera((0, 0), 1.0), 8, 8).covered.any()


def test_barycentrics_recombine_to_pixel_center(model, rng):
    cam = WeakPerspectiveCamera((32, 32), 300)
    mesh = forward(model, rng.normal(0, 0.2, 48), np.zeros(10))
    frag = rasterize_fragments(mesh, cam, 64, 64)
    rows, cols = np.nonzero(frag.covered)
    assert rows.size > 200
    corners = project(cam, mesh.vertices)[model.faces[frag.face_id[rows, cols]]]
    p = np.einsum("pk,pkc->pc", frag.barycentric[rows, cols], corners)
    np.testing.assert_allclose(p, np.stack([cols + 0.5, rows + 0.5], axis=1), atol=1e-6)


class _Uncapped(RasterSettings):
    NEGLIGIBLE_LOGIT = 1e12


def test_cutoff_cap_is_below_double_precision(model, rng):
    v2 = project(WeakPerspectiveCamera((24, 24), 250), forward(model, rng.normal(0, .2, 48), np.zeros(10)).vertices)
    capped, wide = RasterSettings(48, 48), _Uncapped(48, 48)
    assert capped.effective_cutoff < wide.effective_cutoff == 8.0
    np.testing.assert_allclose(render_soft_silhouette(v2, model.faces, capped),
                               render_soft_silhouette(v2, model.faces, wide), rtol=0, atol=1e-15)
    up = rng.normal(size=(48, 48))
    np.testing.assert_allclose(soft_silhouette_backward(v2, model.faces, capped, up),
                               soft_silhouette_backward(v2, model.faces, wide, up), rtol=0, atol=1e-12)


def _features(verts, faces, settings):
    """Nearest-feature state per (face, pixel) pair: edge, clamp status and side."""
    from handrefine.raster import _soft_pairs

    p = _soft_pairs(verts, faces, settings, (0, settings.height))
    keys = zip(p["face"].tolist(), p["py"].tolist(), p["px"].tolist())
    state = zip(p["edge"].tolist(), (p["t"] == 0).tolist(), (p["t"] == 1).tolist(), p["sign"].tolist())
    return dict(zip(keys, state))


def _near_switchover(verts, faces, settings, i, k, margin=1e-3):
    maps = []
    for s in (-1, 0, 1):
        v = verts.copy()
        v[i, k] += s * margin
        maps.append(_features(v, faces, settings))
    if not (maps[0].keys() == maps[1].keys() == maps[2].keys()):
        return True
    return any(len({m[key] for m in maps}) > 1 for key in maps[1])


@pytest.mark.parametrize("sigma_scale", [1e-2, 1e-4])
@pytest.mark.parametrize("seed", range(6))
def test_small_mesh_gradient_away_from_switchovers(seed, sigma_scale):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 21))
    verts = rng.uniform(2, 30, (3 * n, 2))
    faces = np.arange(3 * n).reshape(n, 3)
    st_ = RasterSettings(32, 32, sigma=sigma_scale * (32 ** 2 + 32 ** 2))
    up = rng.normal(size=(32, 32))
    g = soft_silhouette_backward(verts, faces, st_, up)
    h, checked = 1e-4, 0
    for i in range(verts.shape[0]):
        for k in range(2):
            if abs(g[i, k]) <= 1e-8 or _near_switchover(verts, faces, st_, i, k):
                continue
            vp, vm = verts.copy(), verts.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fd = (np.sum(up * render_soft_silhouette(vp, faces, st_))
                  - np.sum(up * render_soft_silhouette(vm, faces, st_))) / (2 * h)
            assert abs(g[i, k] - fd) / max(abs(g[i, k]), abs(fd)) < 1e-3, (i, k, g[i, k], fd)
            checked += 1
    assert checked > 0
