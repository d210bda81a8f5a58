"""Command-line entry points.

Every pipeline stage is an individually invocable subcommand operating on
explicit paths; ``pipeline`` composes them from one JSON config into a fresh
run directory. Common flags: --seed, --workers, --out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dslf import (core, metrics, network, pipeline, preprocess, registration,
                  remesh, renderer, report, synth)


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _common(parser):
    parser.add_argument("--seed", type=int, default=0, help="rng seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker count for parallel sections (resource hint)")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")


def cmd_synth(args):
    config = _load_json(args.config)
    config.setdefault("seed", args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    outputs = pipeline.stage_synth(config, args.out)
    print(f"synth: wrote {len(outputs)} artifacts under {args.out}")


def cmd_register_init(args):
    corrs = _load_json(args.correspondences)
    K0 = np.asarray(corrs["K0"], dtype=np.float64).reshape(3, 3)
    K1 = np.asarray(corrs["K1"], dtype=np.float64).reshape(3, 3)
    x0 = np.asarray(corrs["x0"], dtype=np.float64)
    x1 = np.asarray(corrs["x1"], dtype=np.float64)
    cfg = registration.RansacConfig(seed=args.seed, threshold_px=args.threshold)
    E, inliers = registration.estimate_essential(x0, x1, K0, K1, cfg)
    R, t = registration.decompose_essential(E, x0[inliers], x1[inliers], K0, K1)
    args.out.mkdir(parents=True, exist_ok=True)
    doc = {"E": E.reshape(-1).tolist(), "R": R.reshape(-1).tolist(),
           "t": t.tolist(), "inliers": inliers.tolist()}
    path = args.out / "two_view.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"register-init: {len(inliers)}/{len(x0)} inliers -> {path}")


def cmd_register_pnp(args):
    corrs = _load_json(args.correspondences)
    K = np.asarray(corrs["K"], dtype=np.float64).reshape(3, 3)
    X = np.asarray(corrs["points3d"], dtype=np.float64)
    x = np.asarray(corrs["pixels"], dtype=np.float64)
    cfg = registration.RansacConfig(seed=args.seed, threshold_px=args.threshold)
    pose, inliers = registration.pnp_pose(X, x, K, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "pose_pnp.json"
    core.save_camera(pose, path)
    print(f"register-pnp: {len(inliers)}/{len(X)} inliers -> {path}")


def cmd_register_ba(args):
    doc = _load_json(args.problem)
    poses = [core.CameraPose.from_dict(p) for p in doc["poses"]]
    state = registration.ReconState.create(
        poses, np.asarray(doc["points"], dtype=np.float64),
        np.asarray(doc["obs_view"]), np.asarray(doc["obs_point"]),
        np.asarray(doc["obs_px"], dtype=np.float64),
        np.asarray(doc.get("weights")) if doc.get("weights") else None)
    result = registration.bundle_adjust(state)
    args.out.mkdir(parents=True, exist_ok=True)
    out = {
        "poses": [p.to_dict() for p in result.state.poses],
        "points": result.state.points.tolist(),
        "error_trace": result.error_trace,
        "converged": result.converged,
        "rms_px": registration.rms_reprojection(result.state),
    }
    path = args.out / "bundle.json"
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"register-ba: rms {out['rms_px']:.3e} px after "
          f"{len(result.error_trace) - 1} accepted steps -> {path}")


def cmd_register_refine(args):
    depth = core.DepthMap.load(args.depth)
    init_pose = core.load_camera(args.init_pose)
    doc = _load_json(args.matches)
    matches = [((m[0][0], m[0][1]), (m[1][0], m[1][1])) for m in doc["matches"]]
    cfg = registration.RansacConfig(seed=args.seed, threshold_px=args.threshold)
    pose = registration.refine_pose_with_depth(depth, matches, init_pose.K,
                                               init_pose, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "pose_refined.json"
    core.save_camera(pose, path)
    print(f"register-refine: -> {path}")


def cmd_remesh(args):
    mesh = core.load_mesh(args.mesh)
    tex = remesh.luminance(core.Image.load_png(args.texture).pixels)
    labelmap, trace = remesh.segment_superpixels(
        tex, args.k, args.gamma, args.beta, seed=args.seed, return_trace=True)
    args.out.mkdir(parents=True, exist_ok=True)
    labelmap.save_png16(args.out / "labels.png")
    report.save_energy_trace(trace, args.out / "energy.png")
    refined, rep = remesh.remesh(mesh, labelmap)
    core.save_mesh(refined, args.out / "mesh_remeshed.obj")
    print(f"remesh: {mesh.face_count} -> {refined.face_count} faces, "
          f"{len(rep['passthrough_faces'])} passed through, "
          f"energy {trace[0]:.4f} -> {trace[-1]:.4f}")


def cmd_preprocess(args):
    mesh = core.load_mesh(args.mesh)
    dataset = core.load_dataset(args.dataset)
    cameras = [core.load_camera(p) for p in sorted(Path(args.cameras).glob("cam_*.json"))]
    culled, cull_report = preprocess.cull_occluded(dataset, mesh, cameras)
    residual, _ = preprocess.to_residuals(culled, mesh.vertex_count)
    inverted = preprocess.invert_dataset(residual, mesh)
    args.out.mkdir(parents=True, exist_ok=True)
    core.save_dataset(inverted, args.out / "dataset_residual.dslf")
    preprocess.bake_diffuse_atlas(mesh, inverted.diffuse, args.atlas_resolution) \
        .save_png(args.out / "diffuse_atlas.png")
    print(f"preprocess: kept {cull_report['kept']} samples "
          f"(occluded {cull_report['removed_occluded']}, "
          f"backfacing {cull_report['removed_backfacing']})")


def cmd_train(args):
    mesh = core.load_mesh(args.mesh)
    dataset = core.load_dataset(args.dataset)
    inputs, targets = preprocess.encode_training_tuples(dataset, mesh)
    arch = pipeline.resolve_arch(args.arch)
    net = network.init_network(arch, seed=args.seed)
    schedule = network.TrainSchedule(
        batch_size=args.batch_size, iterations_per_epoch=args.iterations_per_epoch,
        stages=tuple((int(e), float(lr)) for e, lr in
                     json.loads(args.stages)), seed=args.seed,
        holdout_fraction=args.holdout)
    result = network.train(net, inputs, targets, schedule)
    args.out.mkdir(parents=True, exist_ok=True)
    network.save_net(result.net, args.out / "net.dnet")
    network.save_manifest(result.net, args.out / "net.json", "net.dnet")
    report.save_loss_curves(result.train_curve, result.holdout_curve,
                            args.out / "loss_curves.png")
    print(f"train: final train KL {result.train_curve[-1]:.3e}, "
          f"holdout {result.holdout_curve[-1]:.3e}, best epoch {result.best_epoch}")


def cmd_render(args):
    mesh = core.load_mesh(args.mesh)
    net = network.load_net(args.net)
    dataset = core.load_dataset(args.diffuse_dataset)
    camera = core.load_camera(args.camera)
    if args.resolution:
        w, h = (int(x) for x in args.resolution.split("x"))
        camera = core.CameraPose.create(camera.K, camera.R, camera.t, w, h)
    args.out.mkdir(parents=True, exist_ok=True)
    frame = renderer.render_frame(mesh, net, dataset.diffuse, camera)
    frame.save_png(args.out / "frame.png")
    if args.depth:
        depth = renderer.render_depth(mesh, camera)
        depth.save(args.out / "depth.f32")
        depth.save_preview_png(args.out / "depth.png")
    print(f"render: {int(frame.mask.sum())} effective pixels -> {args.out / 'frame.png'}")


def cmd_eval(args):
    config = _load_json(args.config)
    config.setdefault("seed", args.seed)
    outputs = pipeline.stage_eval(config, args.run_dir)
    summary = _load_json(Path(args.run_dir) / "eval" / "summary.json")
    for method, stats in sorted(summary["methods"].items()):
        print(f"  {method:>14}: PSNR {stats['psnr_db']:7.3f} dB   "
              f"SSIM {stats['ssim']:.4f}")
    print(f"eval: wrote {len(outputs)} artifacts")


def cmd_export(args):
    mesh = core.load_mesh(args.mesh)
    net = network.load_net(args.net)
    dataset = core.load_dataset(args.diffuse_dataset)
    camera = core.load_camera(args.camera)
    out = pipeline.export_bundle(mesh, net, dataset.diffuse, camera, args.out)
    print(f"export: bundle at {out}")


def cmd_pipeline(args):
    config = _load_json(args.config)
    config.setdefault("seed", args.seed)
    run_dir = pipeline.run_pipeline(config, args.out)
    print(f"pipeline: run directory {run_dir}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dslf",
        description="surface light field compression and free-viewpoint rendering")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene and capture")
    p.add_argument("--config", required=True, help="scene/camera config JSON")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register-init", help="two-view essential bootstrap")
    p.add_argument("--correspondences", required=True,
                   help="JSON with K0, K1, x0, x1 pixel lists")
    p.add_argument("--threshold", type=float, default=1.0, help="inlier px threshold")
    _common(p)
    p.set_defaults(func=cmd_register_init)

    p = sub.add_parser("register-pnp", help="pose from 2D-3D correspondences")
    p.add_argument("--correspondences", required=True,
                   help="JSON with K, points3d, pixels")
    p.add_argument("--threshold", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_register_pnp)

    p = sub.add_parser("register-ba", help="bundle adjustment")
    p.add_argument("--problem", required=True,
                   help="JSON with poses, points, obs_view, obs_point, obs_px")
    _common(p)
    p.set_defaults(func=cmd_register_ba)

    p = sub.add_parser("register-refine", help="depth-assisted pose refinement")
    p.add_argument("--depth", required=True, help="rendered depth (.f32)")
    p.add_argument("--init-pose", required=True, help="initial camera JSON")
    p.add_argument("--matches", required=True,
                   help="JSON with matches: [[rendered px, acquired px], ...]")
    p.add_argument("--threshold", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_register_refine)

    p = sub.add_parser("remesh", help="texture-aware remeshing")
    p.add_argument("--mesh", required=True)
    p.add_argument("--texture", required=True, help="texture PNG")
    p.add_argument("--k", type=int, required=True, help="superpixel count")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    _common(p)
    p.set_defaults(func=cmd_remesh)

    p = sub.add_parser("preprocess", help="cull, separate, invert, pack")
    p.add_argument("--mesh", required=True)
    p.add_argument("--dataset", required=True, help="raw capture (.dslf)")
    p.add_argument("--cameras", required=True, help="directory of cam_*.json")
    p.add_argument("--atlas-resolution", type=int, default=256)
    _common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the residual predictor")
    p.add_argument("--mesh", required=True)
    p.add_argument("--dataset", required=True, help="residual dataset (.dslf)")
    p.add_argument("--arch", default="desk", help="full | desk | tiny")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--iterations-per-epoch", type=int, default=1000)
    p.add_argument("--stages", default="[[14, 1e-4], [6, 1e-5]]",
                   help="JSON list of [epochs, lr] stages")
    p.add_argument("--holdout", type=float, default=0.1)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one free viewpoint")
    p.add_argument("--mesh", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--diffuse-dataset", required=True,
                   help="residual dataset holding the diffuse table")
    p.add_argument("--camera", required=True, help="camera JSON")
    p.add_argument("--resolution", help="override as WxH")
    p.add_argument("--depth", action="store_true", help="also write depth")
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="held-out viewpoint evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", required=True,
                   help="run directory holding mesh/net/datasets")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export the viewer bundle")
    p.add_argument("--mesh", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--diffuse-dataset", required=True)
    p.add_argument("--camera", required=True)
    _common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("pipeline", help="run configured stages end to end")
    p.add_argument("--config", required=True)
    _common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (core.FormatError, core.ValidationError,
            pipeline.MissingArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
