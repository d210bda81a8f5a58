"""Config-driven end-to-end runs and the viewer bundle exporter.

A pipeline run executes the requested stages in canonical order
(synth -> register -> remesh -> preprocess -> train -> render -> eval ->
export) inside a fresh timestamped run directory and records every artifact
(relative path, size, sha256) plus all seeds in ``manifest.json``. Manifests
contain no wall-clock data, so identical configs reproduce identical
manifests and output hashes.

Each stage is also callable on explicit paths (the CLI exposes them as
subcommands); ``run_pipeline`` is exactly their composition.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from pathlib import Path

import numpy as np

from dslf import (core, metrics, network, preprocess, registration, remesh,
                  renderer, report, synth)
from dslf import __version__

log = logging.getLogger(__name__)

STAGE_ORDER = ("synth", "register", "remesh", "preprocess", "train",
               "render", "eval", "export")

MESH_MAGIC = b"DMSH"


class MissingArtifactError(FileNotFoundError):
    """A stage needs an output some earlier stage did not produce."""


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path, stage, what):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(
            f"stage '{stage}' needs {what} at {path}; run the producing stage first")
    return path


def validate_config(config):
    if not isinstance(config, dict):
        raise core.ValidationError("config must be a JSON object")
    stages = config.get("stages", ["synth", "preprocess", "train", "eval"])
    unknown = [s for s in stages if s not in STAGE_ORDER]
    if unknown:
        raise core.ValidationError(f"unknown stages {unknown}; valid: {STAGE_ORDER}")
    if "synth" in stages and "scene" not in config:
        raise core.ValidationError("stage 'synth' requires a 'scene' section")
    for key in ("scene", "cameras", "train", "eval", "register", "remesh"):
        if key in config and not isinstance(config[key], dict):
            raise core.ValidationError(f"config section {key!r} must be an object")
    return [s for s in STAGE_ORDER if s in stages]


def build_cameras(config):
    cams_cfg = config.get("cameras", {})
    rig = cams_cfg.get("rig", "ring")
    count = int(cams_cfg.get("count", 12))
    radius = float(cams_cfg.get("radius", 3.0))
    width, height_px = (int(x) for x in cams_cfg.get("resolution", [320, 320]))
    fov = float(cams_cfg.get("fov_deg", 45.0))
    seed = int(cams_cfg.get("seed", config.get("seed", 0)))
    if rig == "ring":
        return synth.ring_cameras(count, radius, float(cams_cfg.get("height", 0.5)),
                                  width, height_px, fov)
    if rig == "fibonacci":
        return synth.fibonacci_cameras(count, radius, width, height_px, fov,
                                       seed=seed)
    raise core.ValidationError(f"unknown camera rig {rig!r}")


# ---------------------------------------------------------------------------
# stages (explicit paths)


def stage_synth(config, run_dir):
    run_dir = Path(run_dir)
    scene = synth.make_scene(config["scene"])
    cameras = build_cameras(config)
    core.save_mesh(scene.mesh, run_dir / "mesh.obj")
    cam_dir = run_dir / "cameras"
    cam_dir.mkdir(exist_ok=True)
    for i, cam in enumerate(cameras):
        core.save_camera(cam, cam_dir / f"cam_{i:03d}.json")
    dataset, images = synth.capture_dataset(scene, cameras, mesh_ref="mesh.obj")
    core.save_dataset(dataset, run_dir / "dataset_raw.dslf")
    gt_dir = run_dir / "gt"
    gt_dir.mkdir(exist_ok=True)
    for i, img in enumerate(images):
        img.save_png(gt_dir / f"view_{i:03d}.png")
    outputs = ["mesh.obj", "dataset_raw.dslf"]
    outputs += [f"cameras/cam_{i:03d}.json" for i in range(len(cameras))]
    outputs += [f"gt/view_{i:03d}.png" for i in range(len(images))]
    return outputs


def _rotation_angle(Ra, Rb):
    c = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def stage_register(config, run_dir):
    """Exercise the registration chain on synthetic correspondences derived
    from the scene: two-view essential bootstrap, PnP insertion of the
    remaining views, bundle adjustment from a perturbed start, and the
    depth-assisted second-stage refinement. Writes estimated poses plus an
    error report."""
    run_dir = Path(run_dir)
    cfg = config.get("register", {})
    seed = int(cfg.get("seed", config.get("seed", 0)))
    n_points = int(cfg.get("points", 60))
    noise_px = float(cfg.get("noise_px", 0.0))
    outlier_fraction = float(cfg.get("outlier_fraction", 0.0))
    rng = np.random.default_rng(seed)

    mesh = core.load_mesh(_require(run_dir / "mesh.obj", "register", "the scene mesh"))
    cam_dir = _require(run_dir / "cameras", "register", "the camera rig")
    cameras = [core.load_camera(p) for p in sorted(cam_dir.glob("cam_*.json"))]
    if len(cameras) < 3:
        raise core.ValidationError("registration demo needs at least 3 cameras")
    cameras = cameras[: int(cfg.get("views", min(4, len(cameras))))]

    # world points sampled on the surface, visible everywhere by construction
    pick = rng.choice(mesh.vertex_count, size=min(n_points, mesh.vertex_count),
                      replace=False)
    X = mesh.positions[pick] * 0.98
    obs = [registration.project(c.K, c.R, c.t, X) for c in cameras]
    noisy = [o + rng.normal(scale=noise_px, size=o.shape) if noise_px else o.copy()
             for o in obs]

    x0, x1 = noisy[0].copy(), noisy[1].copy()
    n_out = int(outlier_fraction * len(X))
    out_idx = rng.choice(len(X), size=n_out, replace=False) if n_out else []
    if n_out:
        x1[out_idx] += rng.uniform(15, 60, size=(n_out, 2)) * rng.choice([-1, 1], (n_out, 2))

    rcfg = registration.RansacConfig(seed=seed,
                                     threshold_px=max(1.0, 3.0 * noise_px))
    E, inliers = registration.estimate_essential(x0, x1, cameras[0].K,
                                                 cameras[1].K, rcfg)
    R_rel, t_rel = registration.decompose_essential(E, x0[inliers], x1[inliers],
                                                    cameras[0].K, cameras[1].K)
    R_gt = cameras[1].R @ cameras[0].R.T
    t_gt = cameras[1].t - R_gt @ cameras[0].t
    t_gt = t_gt / np.linalg.norm(t_gt)

    pnp_report = []
    for j in range(2, len(cameras)):
        pose, inl = registration.pnp_pose(X, noisy[j], cameras[j].K, rcfg,
                                          width=cameras[j].width,
                                          height=cameras[j].height)
        pnp_report.append({
            "view": j,
            "rotation_error_rad": _rotation_angle(pose.R, cameras[j].R),
            "translation_error": float(np.max(np.abs(pose.t - cameras[j].t))),
            "inliers": int(len(inl)),
        })

    # bundle adjustment from a perturbed ground-truth start
    perturb = np.deg2rad(float(cfg.get("perturb_deg", 1.0)))
    init_poses = [cameras[0]]
    for c in cameras[1:]:
        w = rng.normal(size=3)
        w = w / np.linalg.norm(w) * perturb
        Rp = registration._rodrigues(w) @ c.R
        tp = c.t * (1.0 + 0.01 * rng.normal(size=3))
        init_poses.append(core.CameraPose.create(
            c.K, registration._orthonormalize(Rp), tp, c.width, c.height))
    obs_view = np.repeat(np.arange(len(cameras)), len(X))
    obs_point = np.tile(np.arange(len(X)), len(cameras))
    obs_px = np.concatenate(obs)
    pts_init = X * (1.0 + 0.01 * rng.normal(size=X.shape))
    state = registration.ReconState.create(init_poses, pts_init, obs_view,
                                           obs_point, obs_px)
    ba = registration.bundle_adjust(state)

    # depth-assisted refinement of a perturbed view
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * np.deg2rad(float(cfg.get("refine_perturb_deg", 2.0)))
    target = cameras[2]
    init = core.CameraPose.create(
        target.K, registration._orthonormalize(registration._rodrigues(w) @ target.R),
        target.t * (1.0 + 0.02 * rng.normal(size=3)), target.width, target.height)
    depth = renderer.render_depth(mesh, init)
    ys, xs = np.nonzero(depth.coverage)
    matches = []
    for y, x in list(zip(ys.tolist(), xs.tolist()))[:: max(1, len(ys) // 80)]:
        px, py = x + 0.5, y + 0.5
        Xw = registration.backproject_pixel(depth, px, py, init.K, init)
        acq = registration.project(target.K, target.R, target.t, Xw[None, :])[0]
        matches.append(((px, py), acq))
    refined = registration.refine_pose_with_depth(depth, matches, target.K, init, rcfg)

    reg_dir = run_dir / "register"
    reg_dir.mkdir(exist_ok=True)
    poses_doc = {"two_view": {"R": R_rel.reshape(-1).tolist(),
                              "t": t_rel.tolist()},
                 "bundle": [p.to_dict() for p in ba.state.poses]}
    with open(reg_dir / "poses_est.json", "w", encoding="utf-8") as fh:
        json.dump(poses_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    report_doc = {
        "essential": {
            "inliers": int(len(inliers)),
            "points": int(len(X)),
            "rotation_error_rad": _rotation_angle(R_rel, R_gt),
            "translation_direction_error": float(np.linalg.norm(t_rel - t_gt)),
        },
        "pnp": pnp_report,
        "bundle_adjustment": {
            "initial_rms_px": registration.rms_reprojection(state),
            "final_rms_px": registration.rms_reprojection(ba.state),
            "accepted_steps": len(ba.error_trace) - 1,
            "converged": ba.converged,
        },
        "depth_refinement": {
            "init_rotation_error_rad": _rotation_angle(init.R, target.R),
            "refined_rotation_error_rad": _rotation_angle(refined.R, target.R),
            "refined_translation_error": float(np.max(np.abs(refined.t - target.t))),
        },
    }
    with open(reg_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ["register/poses_est.json", "register/report.json"]


def bake_region_texture(scene, resolution=128):
    """Grayscale texture from the scene's material regions (kd luminance)."""
    h = w = int(resolution)
    lum = np.array([m.kd @ remesh.LUMA for m in scene.materials])
    if scene.region_map is not None:
        ys = np.clip((np.arange(h)[:, None] + 0.5) / h * scene.region_map.shape[0],
                     0, scene.region_map.shape[0] - 1).astype(int)
        xs = np.clip((np.arange(w)[None, :] + 0.5) / w * scene.region_map.shape[1],
                     0, scene.region_map.shape[1] - 1).astype(int)
        return lum[scene.region_map[ys, xs]]
    return np.full((h, w), float(lum[0]))


def stage_remesh(config, run_dir):
    """Segment the texture, split the mesh along superpixel boundaries, and
    re-capture the dataset on the refined mesh so downstream per-vertex data
    stays consistent."""
    run_dir = Path(run_dir)
    cfg = config.get("remesh", {})
    _require(run_dir / "mesh.obj", "remesh", "the scene mesh")
    scene_cfg = config.get("scene")
    if scene_cfg is None:
        raise core.ValidationError("remesh stage needs the scene config")
    scene = synth.make_scene(scene_cfg)

    texture_path = cfg.get("texture")
    if texture_path:
        tex = remesh.luminance(core.Image.load_png(texture_path).pixels)
    else:
        tex = bake_region_texture(scene, cfg.get("texture_resolution", 128))

    k = int(cfg.get("k", 16))
    labelmap, trace = remesh.segment_superpixels(
        tex, k, float(cfg.get("gamma", 1.0)), float(cfg.get("beta", 0.5)),
        seed=int(cfg.get("seed", config.get("seed", 0))), return_trace=True)
    out_dir = run_dir / "remesh"
    out_dir.mkdir(exist_ok=True)
    labelmap.save_png16(out_dir / "labels.png")
    report.save_energy_trace(trace, out_dir / "energy.png")

    refined, rep = remesh.remesh(scene.mesh, labelmap)
    core.save_mesh(refined, out_dir / "mesh_remeshed.obj")

    # re-capture on the refined mesh (per-vertex samples must match it)
    refined_scene = synth.Scene(
        refined, scene.materials,
        synth.lookup_region(scene.region_map, refined.uvs)
        if scene.region_map is not None
        else np.zeros(refined.vertex_count, dtype=np.int32),
        scene.point_lights, scene.ambient, scene.region_map)
    cameras = build_cameras(config)
    dataset, _ = synth.capture_dataset(refined_scene, cameras,
                                       mesh_ref="remesh/mesh_remeshed.obj")
    core.save_dataset(dataset, run_dir / "dataset_raw.dslf")

    doc = {"k": k, "input_faces": scene.mesh.face_count,
           "output_faces": refined.face_count,
           "passthrough_faces": rep["passthrough_faces"],
           "accepted_moves": len(trace) - 1,
           "energy_initial": trace[0], "energy_final": trace[-1]}
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ["remesh/labels.png", "remesh/mesh_remeshed.obj", "remesh/energy.png",
            "remesh/report.json", "dataset_raw.dslf"]


def active_mesh_path(run_dir):
    run_dir = Path(run_dir)
    refined = run_dir / "remesh" / "mesh_remeshed.obj"
    return refined if refined.exists() else run_dir / "mesh.obj"


def stage_preprocess(config, run_dir):
    run_dir = Path(run_dir)
    mesh = core.load_mesh(_require(active_mesh_path(run_dir), "preprocess",
                                   "the scene mesh"))
    dataset = core.load_dataset(_require(run_dir / "dataset_raw.dslf",
                                         "preprocess", "the raw capture"))
    cam_dir = _require(run_dir / "cameras", "preprocess", "the camera rig")
    cameras = [core.load_camera(p) for p in sorted(cam_dir.glob("cam_*.json"))]

    culled, cull_report = preprocess.cull_occluded(dataset, mesh, cameras)
    residual, sep_report = preprocess.to_residuals(culled, mesh.vertex_count)
    inverted = preprocess.invert_dataset(residual, mesh)
    core.save_dataset(inverted, run_dir / "dataset_residual.dslf")

    atlas = preprocess.bake_diffuse_atlas(
        mesh, inverted.diffuse,
        int(config.get("preprocess", {}).get("atlas_resolution", 256)))
    atlas.save_png(run_dir / "diffuse_atlas.png")
    with open(run_dir / "preprocess_report.json", "w", encoding="utf-8") as fh:
        json.dump({"culling": cull_report,
                   "empty_vertices": len(sep_report["empty_vertices"])},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ["dataset_residual.dslf", "diffuse_atlas.png", "preprocess_report.json"]


ARCH_PRESETS = {"full": network.ArchSpec(), "desk": network.DESK_ARCH,
                "tiny": network.TINY_ARCH}


def resolve_arch(spec_name):
    if isinstance(spec_name, dict):
        return network.ArchSpec.from_dict(spec_name)
    if spec_name in ARCH_PRESETS:
        return ARCH_PRESETS[spec_name]
    raise core.ValidationError(
        f"unknown arch {spec_name!r}; presets: {sorted(ARCH_PRESETS)}")


def resolve_schedule(cfg, seed):
    if cfg.get("paper_schedule"):
        return network.PAPER_SCHEDULE
    return network.TrainSchedule(
        batch_size=int(cfg.get("batch_size", 512)),
        iterations_per_epoch=int(cfg.get("iterations_per_epoch", 1000)),
        stages=tuple((int(e), float(lr))
                     for e, lr in cfg.get("stages", [[14, 1e-4], [6, 1e-5]])),
        seed=seed,
        holdout_fraction=float(cfg.get("holdout_fraction", 0.1)))


def stage_train(config, run_dir):
    run_dir = Path(run_dir)
    cfg = config.get("train", {})
    mesh = core.load_mesh(_require(active_mesh_path(run_dir), "train", "the mesh"))
    dataset = core.load_dataset(_require(run_dir / "dataset_residual.dslf",
                                         "train", "the preprocessed dataset"))
    inputs, targets = preprocess.encode_training_tuples(dataset, mesh)
    arch = resolve_arch(cfg.get("arch", "desk"))
    seed = int(cfg.get("seed", config.get("seed", 0)))
    net = network.init_network(arch, seed=seed)
    schedule = resolve_schedule(cfg, seed)
    result = network.train(net, inputs, targets, schedule)

    network.save_net(result.net, run_dir / "net.dnet")
    network.save_manifest(result.net, run_dir / "net.json", "net.dnet")
    with open(run_dir / "loss_curves.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_kl,holdout_kl\n")
        for i, (tr, ho) in enumerate(zip(result.train_curve, result.holdout_curve), 1):
            fh.write(f"{i},{tr:.10g},{ho:.10g}\n")
    report.save_loss_curves(result.train_curve, result.holdout_curve,
                            run_dir / "loss_curves.png")
    return ["net.dnet", "net.json", "loss_curves.csv", "loss_curves.png"]


def stage_render(config, run_dir):
    run_dir = Path(run_dir)
    cfg = config.get("render", {})
    mesh = core.load_mesh(_require(active_mesh_path(run_dir), "render", "the mesh"))
    net = network.load_net(_require(run_dir / "net.dnet", "render",
                                    "a trained net"))
    dataset = core.load_dataset(_require(run_dir / "dataset_residual.dslf",
                                         "render", "the diffuse table"))
    cam_path = cfg.get("camera")
    if cam_path:
        camera = core.load_camera(cam_path)
    else:
        idx = int(cfg.get("camera_index", 0))
        camera = core.load_camera(_require(
            run_dir / "cameras" / f"cam_{idx:03d}.json", "render", "a camera"))
    out_dir = run_dir / "renders"
    out_dir.mkdir(exist_ok=True)
    frame = renderer.render_frame(mesh, net, dataset.diffuse, camera)
    frame.save_png(out_dir / "frame.png")
    depth = renderer.render_depth(mesh, camera)
    depth.save(out_dir / "depth.f32")
    depth.save_preview_png(out_dir / "depth.png")
    return ["renders/frame.png", "renders/depth.f32", "renders/depth.png"]


def stage_eval(config, run_dir):
    run_dir = Path(run_dir)
    cfg = config.get("eval", {})
    scene = synth.make_scene(config["scene"])
    mesh = core.load_mesh(_require(active_mesh_path(run_dir), "eval", "the mesh"))
    if mesh.vertex_count != scene.mesh.vertex_count:
        # remeshed geometry: rebuild the scene around it
        scene = synth.Scene(
            mesh, scene.materials,
            synth.lookup_region(scene.region_map, mesh.uvs)
            if scene.region_map is not None
            else np.zeros(mesh.vertex_count, dtype=np.int32),
            scene.point_lights, scene.ambient, scene.region_map)
    net = network.load_net(_require(run_dir / "net.dnet", "eval", "a trained net"))
    raw = core.load_dataset(_require(run_dir / "dataset_raw.dslf", "eval",
                                     "the raw capture"))
    residual = core.load_dataset(_require(run_dir / "dataset_residual.dslf",
                                          "eval", "the diffuse table"))
    cams_cfg = config.get("cameras", {})
    width, height_px = (int(x) for x in cams_cfg.get("resolution", [320, 320]))
    cameras = metrics.heldout_cameras(
        int(cfg.get("viewpoints", 20)),
        float(cams_cfg.get("radius", 3.0)),
        float(cams_cfg.get("height", 0.5)),
        seed=int(cfg.get("seed", config.get("seed", 0))),
        width=width, height_px=height_px,
        fov_deg=float(cams_cfg.get("fov_deg", 45.0)),
        height_band=float(cfg.get("height_band", 0.0)),
        radius_band=float(cfg.get("radius_band", 0.0)))
    rows = metrics.evaluate_views(scene, net, residual.diffuse, raw, cameras)
    summary = metrics.summarize(rows)

    raw_bytes = (run_dir / "dataset_raw.dslf").stat().st_size
    net_bytes = (run_dir / "net.dnet").stat().st_size
    diffuse_bytes = residual.diffuse.size * 4
    compression = {
        "raw_bytes": raw_bytes,
        "net_bytes": net_bytes,
        "diffuse_bytes": diffuse_bytes,
        "rate": metrics.compression_rate(raw_bytes, net_bytes + diffuse_bytes),
    }

    out_dir = run_dir / "eval"
    out_dir.mkdir(exist_ok=True)
    metrics.write_results_csv(rows, out_dir / "results.csv")
    metrics.write_summary_json(summary, out_dir / "summary.json",
                               extra={"compression": compression})
    report.save_metric_curves(rows, out_dir / "psnr_by_view.png", "psnr_db")
    report.save_metric_curves(rows, out_dir / "ssim_by_view.png", "ssim")
    report.save_summary_bars(summary, out_dir / "summary.png")
    return ["eval/results.csv", "eval/summary.json", "eval/psnr_by_view.png",
            "eval/ssim_by_view.png", "eval/summary.png"]


def stage_export(config, run_dir):
    run_dir = Path(run_dir)
    mesh = core.load_mesh(_require(active_mesh_path(run_dir), "export", "the mesh"))
    net = network.load_net(_require(run_dir / "net.dnet", "export",
                                    "a trained net"))
    dataset = core.load_dataset(_require(run_dir / "dataset_residual.dslf",
                                         "export", "the diffuse table"))
    idx = int(config.get("export", {}).get("camera_index", 0))
    camera = core.load_camera(_require(
        run_dir / "cameras" / f"cam_{idx:03d}.json", "export", "a camera"))
    atlas = run_dir / "diffuse_atlas.png"
    export_bundle(mesh, net, dataset.diffuse, camera, run_dir / "bundle",
                  atlas_png=atlas if atlas.exists() else None)
    bundle_files = sorted(str(p.relative_to(run_dir))
                          for p in (run_dir / "bundle").rglob("*") if p.is_file())
    return bundle_files


STAGE_FUNCTIONS = {
    "synth": stage_synth,
    "register": stage_register,
    "remesh": stage_remesh,
    "preprocess": stage_preprocess,
    "train": stage_train,
    "render": stage_render,
    "eval": stage_eval,
    "export": stage_export,
}


def run_pipeline(config, out_root, run_name=None):
    """Execute the configured stages into a fresh run directory; returns its
    path. Never overwrites an existing run."""
    stages = validate_config(config)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    h = config_hash(config)
    if run_name is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_name = f"run-{stamp}-{h[:8]}"
    run_dir = out_root / run_name
    suffix = 0
    while run_dir.exists():
        suffix += 1
        run_dir = out_root / f"{run_name}-{suffix}"
    run_dir.mkdir()

    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest = {
        "config_hash": h,
        "version": __version__,
        "seeds": collect_seeds(config),
        "stages": {},
    }
    for stage in stages:
        log.info("stage %s", stage)
        outputs = STAGE_FUNCTIONS[stage](config, run_dir)
        manifest["stages"][stage] = {
            "outputs": {
                rel: {"bytes": (run_dir / rel).stat().st_size,
                      "sha256": _sha256(run_dir / rel)}
                for rel in outputs
            }
        }
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def collect_seeds(config):
    seeds = {"root": int(config.get("seed", 0))}
    for key in ("cameras", "train", "eval", "register", "remesh"):
        if key in config and "seed" in config[key]:
            seeds[key] = int(config[key]["seed"])
    return seeds


# ---------------------------------------------------------------------------
# viewer bundle


def save_mesh_binary(mesh, path, diffuse=None):
    """Indexed little-endian binary: header (magic, version, V, F), then
    positions/normals/uvs as f32 and faces as u32; an f32 per-vertex diffuse
    block is appended when given (recorded in the bundle manifest)."""
    with open(path, "wb") as fh:
        fh.write(MESH_MAGIC)
        fh.write(struct.pack("<III", 1, mesh.vertex_count, mesh.face_count))
        fh.write(mesh.positions.astype("<f4").tobytes())
        fh.write(mesh.normals.astype("<f4").tobytes())
        fh.write(mesh.uvs.astype("<f4").tobytes())
        fh.write(mesh.faces.astype("<u4").tobytes())
        if diffuse is not None:
            fh.write(np.asarray(diffuse).astype("<f4").tobytes())


def load_mesh_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MESH_MAGIC:
        raise core.FormatError(f"{path}: bad mesh magic")
    version, v, f = struct.unpack_from("<III", blob, 4)
    off = 16
    sizes = [("positions", 3 * v, 3), ("normals", 3 * v, 3), ("uvs", 2 * v, 2)]
    arrays = {}
    for name, count, width in sizes:
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count,
                                     offset=off).astype(np.float64).reshape(v, width)
        off += 4 * count
    faces = np.frombuffer(blob, dtype="<u4", count=3 * f, offset=off)
    off += 12 * f
    faces = faces.reshape(f, 3).astype(np.int32)
    diffuse = None
    if off + 12 * v <= len(blob):
        diffuse = np.frombuffer(blob, dtype="<f4", count=3 * v,
                                offset=off).astype(np.float64).reshape(v, 3)
    mesh = core.Mesh.create(arrays["positions"], arrays["normals"],
                            np.clip(arrays["uvs"], 0.0, 1.0), faces)
    return mesh, diffuse


def export_bundle(mesh, net, diffuse, camera, out_dir, atlas_png=None):
    """Write the static-viewer bundle: f32 mesh + diffuse, DNET weights with
    a JSON manifest, the diffuse atlas, and one reference frame (camera,
    image, per-vertex colors) rendered from the exported-precision assets.
    """
    out_dir = Path(out_dir)
    (out_dir / "reference").mkdir(parents=True, exist_ok=True)

    # snap to export precision first so re-imports render identically
    snapped = core.Mesh.create(core.f32grid(mesh.positions),
                               core.f32grid(mesh.normals),
                               np.clip(core.f32grid(mesh.uvs), 0.0, 1.0),
                               mesh.faces)
    diffuse_f32 = core.f32grid(np.asarray(diffuse, dtype=np.float64))

    save_mesh_binary(snapped, out_dir / "mesh.bin", diffuse_f32)
    network.save_net(net, out_dir / "net.dnet")
    network.save_manifest(net, out_dir / "net.json", "net.dnet")
    core.save_camera(camera, out_dir / "reference" / "camera.json")

    if atlas_png is not None:
        atlas = core.Image.load_png(atlas_png)
    else:
        atlas = preprocess.bake_diffuse_atlas(snapped, diffuse_f32, 256)
    atlas.save_png(out_dir / "diffuse.png")

    colors = renderer.dslf_vertex_colors(snapped, net, diffuse_f32, camera)
    with open(out_dir / "reference" / "vertex_colors.bin", "wb") as fh:
        fh.write(colors.astype("<f4").tobytes())
    frame = renderer.render_vertex_colors(snapped, colors, camera)
    frame.save_png(out_dir / "reference" / "frame.png")

    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            rel = str(p.relative_to(out_dir))
            files[rel] = {"bytes": p.stat().st_size, "sha256": _sha256(p)}
    manifest = {
        "format": "dslf-bundle",
        "version": 1,
        "vertex_count": snapped.vertex_count,
        "face_count": snapped.face_count,
        "arch": net.arch.to_dict(),
        "mesh_layout": ["positions f32", "normals f32", "uvs f32",
                        "faces u32", "diffuse f32"],
        "reference_camera": "reference/camera.json",
        "files": files,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir
