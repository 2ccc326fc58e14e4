"""Command line entry point: ``handrefine <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io
from .camera import project, transfer_camera
from .hand_model import forward, toy_model
from .losses import View
from .metrics import fscore, mask_iou, mpve, pck_auc, pixel_accuracy, procrustes_align
from .raster import RasterSettings, rasterize_fragments, render_soft_silhouette
from .refine import history_csv, refine
from .stereo import ViewPrediction, fuse_prediction, heuristic_weights
from .texture import TextureMap, bake, ema_update, unwrap


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args) -> io.RunConfig:
    cfg = io.read_config(args.config) if getattr(args, "config", None) else io.RunConfig()
    for name in ("threads", "sigma", "width", "height"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def cmd_toygen(args):
    io.write_model(args.out, toy_model(args.seed, args.segments))


def cmd_render(args):
    cfg = _config(args)
    model = io.read_model(args.model)
    params = io.read_params(args.params, model)
    mesh = forward(model, params.pose, params.shape)
    settings = RasterSettings(cfg.width, cfg.height, cfg.sigma, cfg.dist_cutoff, cfg.threads)
    io.write_silhouette(args.out, render_soft_silhouette(project(params.camera, mesh.vertices), model.faces, settings))


def _write_refined(args, model, mesh, refined, state):
    io.write_params(args.out_params, refined)
    if args.out_mesh:
        io.write_obj(args.out_mesh, mesh.vertices, model.faces)
    if args.out_history:
        Path(args.out_history).write_text(history_csv(state.history), encoding="utf-8")


def cmd_refine(args):
    cfg = _config(args)
    model = io.read_model(args.model)
    params = io.read_params(args.params, model)
    target = io.read_silhouette(args.target)
    mesh, refined, _, state = refine(model, params, View(target, params.camera), cfg.refine_config(args.iters))
    _write_refined(args, model, mesh, refined, state)


def cmd_stereo_refine(args):
    cfg = _config(args)
    model = io.read_model(args.model)
    right = io.read_params(args.params_right, model)
    left = io.read_params(args.params_left, model)
    target_r = io.read_silhouette(args.target_right)
    target_l = io.read_silhouette(args.target_left)
    rig = io.read_rig(args.rig)
    mesh_l = forward(model, left.pose, left.shape)
    if args.heuristic:
        mesh_r = forward(model, right.pose, right.shape)
        h_r, w_r = target_r.shape
        h_l, w_l = target_l.shape
        w = heuristic_weights(
            rasterize_fragments(mesh_r, right.camera, w_r, h_r),
            rasterize_fragments(mesh_l, left.camera, w_l, h_l),
            project(right.camera, mesh_r.vertices), project(left.camera, mesh_l.vertices), model)
    else:
        w = io.read_weights(args.weights, model.pose_dim)
    fused = fuse_prediction(ViewPrediction(right, "right"), ViewPrediction(left, "left"), w, rig,
                            mesh_l.joints3d[0], slerp_blend=cfg.slerp_blend)
    root = forward(model, fused.pose, fused.shape).joints3d[0]
    inv = rig.inverse()
    views = [
        View(target_r, fused.camera),
        View(target_l, transfer_camera(inv, fused.camera, root), inv.rotation, root),
    ]
    mesh, refined, _, state = refine(model, fused, views, cfg.refine_config(args.iters))
    _write_refined(args, model, mesh, refined, state)


def cmd_bake(args):
    cfg = _config(args)
    model = io.read_model(args.model)
    params = io.read_params(args.params, model)
    image = io.read_rgb(args.image)
    resolution = args.resolution or cfg.texture_resolution
    mesh = forward(model, params.pose, params.shape)
    frag = rasterize_fragments(mesh, params.camera, image.shape[1], image.shape[0])
    tex = bake(image, mesh, unwrap(model, resolution), frag)
    if args.prev:
        prev: TextureMap = io.read_texture(args.prev)
        beta = cfg.texture_beta if args.beta is None else args.beta
        tex = ema_update(prev, tex, beta)
    io.write_texture(args.out, tex)


def cmd_eval(args):
    pred = io.read_points(args.pred)
    gt = io.read_points(args.gt)
    rows = [
        ("mpve_mm", mpve(pred, gt)),
        ("pa_mpve_mm", mpve(pred, gt, aligned=True)),
    ]
    aligned_pred = procrustes_align(pred, gt)[1]
    for thr in args.thresholds:
        rows.append((f"fscore@{thr:g}mm", fscore(pred, gt, thr)))
        rows.append((f"pa_fscore@{thr:g}mm", fscore(aligned_pred, gt, thr)))
    rows.append(("pck_auc", pck_auc(pred, gt, args.max_threshold, args.steps)))
    rows.append(("pa_pck_auc", pck_auc(aligned_pred, gt, args.max_threshold, args.steps)))
    for name, value in rows:
        print(f"{name}={value:.6f}")


def cmd_eval_mask(args):
    a = io.read_silhouette(args.a)
    b = io.read_silhouette(args.b)
    print(f"iou={mask_iou(a, b):.6f}")
    print(f"pixel_accuracy={pixel_accuracy(a, b):.6f}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="handrefine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toygen", help="write a procedural toy hand model")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--segments", type=int, default=3, help="rings per finger bone (>= 2)")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_toygen)

    def raster_flags(p):
        p.add_argument("--config")
        p.add_argument("--sigma", type=float)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("render", help="render a soft silhouette (P5)")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", "-o", required=True)
    raster_flags(p)
    p.set_defaults(func=cmd_render)

    def refine_outputs(p):
        p.add_argument("--iters", type=int)
        p.add_argument("--out-params", required=True)
        p.add_argument("--out-mesh")
        p.add_argument("--out-history")
        raster_flags(p)

    p = sub.add_parser("refine", help="mono test-time refinement")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--target", required=True, help="target silhouette (P5)")
    refine_outputs(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("stereo-refine", help="fuse two views and refine against both")
    p.add_argument("--model", required=True)
    p.add_argument("--params-right", required=True)
    p.add_argument("--params-left", required=True)
    p.add_argument("--target-right", required=True)
    p.add_argument("--target-left", required=True)
    p.add_argument("--rig", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights")
    src.add_argument("--heuristic", action="store_true")
    refine_outputs(p)
    p.set_defaults(func=cmd_stereo_refine)

    p = sub.add_parser("bake", help="project an image onto the texture atlas (P6 + .w.pgm)")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--prev")
    p.add_argument("--beta", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--config")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("eval", help="point-set metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", type=float, nargs="+", default=[5.0, 15.0])
    p.add_argument("--max-threshold", type=float, default=50.0)
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-mask", help="mask IoU and pixel accuracy")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_eval_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"handrefine {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
