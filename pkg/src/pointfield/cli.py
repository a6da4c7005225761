"""Command-line pipeline: dataset generation, training, reconstruction,
completion, up-sampling, hole-filling, rendering, interpolation, stitching
and evaluation.

Every command writes a run manifest (resolved options, input hashes, seed,
code version) into its output directory before doing any work, so a run can
be reproduced from the manifest alone.  Option precedence is flags, then a
YAML config file, then built-in defaults.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from . import __version__
from .dataset import (Box, SceneFormatError, Sphere, UnionShape, load_scene,
                      make_scene, save_png, save_scene)
from .encoder import EncoderConfig, prepare_points
from .finetune import (FinetuneConfig, finetune_completion, finetune_latent,
                       infer_zero_view, interpolate_latents, stitch_parts)
from .geometry import (ColoredPointCloud, PlyParseError, SplitPlane,
                       load_cloud_ply, save_cloud_ply, split_by_plane)
from .hypernet import FieldArchitecture
from .mesher import (EmptyMeshError, color_vertices, extract_mesh,
                     icosphere_cameras, resample_cloud, save_mesh_ply)
from .metrics import (MetricReport, chamfer_normalized, mmd, psnr, ssim)
from .renderer import OccupancyGrid, RenderConfig, render_view
from .training import (Checkpoint, CheckpointKindError, TrainConfig,
                       load_checkpoint, save_checkpoint, train_completion,
                       train_generation)

EXIT_MISSING_CHECKPOINT = 3
EXIT_WRONG_KIND = 4
EXIT_BAD_INPUT = 5
EXIT_TRAINING_FAILED = 6

DESK_GRID_RESOLUTION = 32
DESK_STEP = 0.02


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()[:16]


def _hash_input(path) -> str:
    path = Path(path)
    if path.is_file():
        return _hash_file(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(sub.relative_to(path)).encode())
            digest.update(_hash_file(sub).encode())
        return digest.hexdigest()[:16]
    return "missing"


def write_manifest(out_dir, command: str, params: dict, inputs: dict,
                   seed: int | None = None):
    """Emit the run manifest before any real work starts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "params": {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()},
        "input_hashes": {k: _hash_input(v) for k, v in inputs.items() if v is not None},
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def _load_ckpt(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        click.echo(f"error: checkpoint not found: {path}", err=True)
        sys.exit(EXIT_MISSING_CHECKPOINT)
    return load_checkpoint(path)


def _guard_input_errors(fn):
    """Map input/kind failures to their distinct exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CheckpointKindError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_WRONG_KIND)
        except (SceneFormatError, PlyParseError, FileNotFoundError, EmptyMeshError,
                ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_BAD_INPUT)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="YAML file with default option values (flags win).")
@click.option("--deterministic/--no-deterministic", default=True,
              help="Single-threaded math for reproducible runs.")
@click.pass_context
def main(ctx, config, deterministic):
    """Point-cloud conditioned neural field pipeline."""
    if config is not None:
        with open(config) as f:
            ctx.default_map = yaml.safe_load(f) or {}
    if deterministic:
        torch.set_num_threads(1)
    ctx.obj = {"deterministic": deterministic}


# ---------------------------------------------------------------- dataset --

_SHAPE_BUILDERS = {
    "sphere": lambda rng: Sphere(
        radius=float(rng.uniform(0.3, 0.6)),
        color=tuple(rng.uniform(0.2, 1.0, 3)),
        second_color=tuple(rng.uniform(0.2, 1.0, 3))),
    "box": lambda rng: Box(
        half_extents=tuple(rng.uniform(0.25, 0.5, 3)),
        color=tuple(rng.uniform(0.2, 1.0, 3))),
    "union": lambda rng: UnionShape(
        Sphere(center=(-0.35, 0.0, 0.0), radius=float(rng.uniform(0.25, 0.4)),
               color=tuple(rng.uniform(0.2, 1.0, 3))),
        Box(center=(0.35, 0.0, 0.0),
            half_extents=tuple(rng.uniform(0.15, 0.35, 3)),
            color=tuple(rng.uniform(0.2, 1.0, 3)))),
}


@main.group()
def dataset():
    """Synthetic scene generation and inspection."""


@dataset.command("make")
@click.option("--out", required=True, type=click.Path(),
              envvar="POINTFIELD_DATA_ROOT", help="Output dataset root.")
@click.option("--kind", default="mixed",
              type=click.Choice(["sphere", "box", "union", "mixed"]))
@click.option("--count", default=3, show_default=True)
@click.option("--preset", default="desk", type=click.Choice(["desk", "full"]),
              show_default=True, help="desk: 64x64 x 20 views; full: 200x200 x 100 views.")
@click.option("--views", default=None, type=int, help="Override preset view count.")
@click.option("--resolution", default=None, type=int, help="Override preset image size.")
@click.option("--seed", default=0, show_default=True)
@_guard_input_errors
def dataset_make(out, kind, count, preset, views, resolution, seed):
    """Generate COUNT scene directories under OUT."""
    out = Path(out)
    write_manifest(out, "dataset make",
                   {"kind": kind, "count": count, "preset": preset,
                    "views": views, "resolution": resolution}, {}, seed)
    kinds = [kind] * count if kind != "mixed" else \
        [("sphere", "box", "union")[i % 3] for i in range(count)]
    n_views, resolution_default = (20, 64) if preset == "desk" else (100, 200)
    n_views = views if views is not None else n_views
    resolution = resolution if resolution is not None else resolution_default
    for i, k in enumerate(kinds):
        rng = np.random.default_rng(seed + i)
        shape = _SHAPE_BUILDERS[k](rng)
        scene = make_scene(shape, n_points=16384, n_views=n_views, radius=1.5,
                           resolution=resolution, seed=seed + i)
        scene_dir = out / f"scene_{i:03d}"
        save_scene(scene, scene_dir)
        click.echo(f"wrote {scene_dir} ({k}, {n_views} views @ {resolution}px)")


def _load_scenes(data_dir, fraction: float = 1.0):
    data_dir = Path(data_dir)
    scene_dirs = sorted(p for p in data_dir.iterdir()
                        if p.is_dir() and (p / "meta.json").exists())
    if not scene_dirs:
        raise SceneFormatError(f"no scene directories under {data_dir}")
    keep = max(1, int(len(scene_dirs) * fraction))
    return [load_scene(p) for p in scene_dirs[:keep]], scene_dirs[:keep]


# ------------------------------------------------------------------ train --

def _train_config(kind: str, iters, lr, rays, kl_weight, seed, grid_res,
                  deterministic) -> TrainConfig:
    base = dict(iterations=iters, lr=lr, rays_per_step=rays, kl_weight=kl_weight,
                seed=seed, grid_resolution=grid_res, deterministic=deterministic,
                render=RenderConfig(step_size=DESK_STEP))
    if kind == "complete":
        return TrainConfig.for_completion(**base)
    return TrainConfig(**base)


@main.group()
def train():
    """Train the generation or completion framework."""


def _train_command(kind):
    @click.option("--data", required=True, type=click.Path(exists=True),
                  envvar="POINTFIELD_DATA_ROOT")
    @click.option("--out", required=True, type=click.Path(), help="Checkpoint path.")
    @click.option("--iters", default=2000, show_default=True)
    @click.option("--lr", default=1e-3, show_default=True)
    @click.option("--rays", default=400, show_default=True)
    @click.option("--kl-weight", default=1e-4, show_default=True)
    @click.option("--seed", default=0, show_default=True)
    @click.option("--grid-res", default=DESK_GRID_RESOLUTION, show_default=True)
    @click.option("--train-fraction", default=0.9, show_default=True,
                  help="Leading fraction of scenes used for training.")
    @click.pass_context
    @_guard_input_errors
    def cmd(ctx, data, out, iters, lr, rays, kl_weight, seed, grid_res,
            train_fraction):
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_manifest(out.parent, f"train {kind}",
                       {"data": str(data), "out": str(out), "iters": iters,
                        "lr": lr, "rays": rays, "kl_weight": kl_weight,
                        "grid_res": grid_res, "train_fraction": train_fraction},
                       {"data": data}, seed)
        scenes, dirs = _load_scenes(data, train_fraction)
        click.echo(f"training on {len(scenes)} scenes: "
                   + ", ".join(d.name for d in dirs))
        cfg = _train_config(kind, iters, lr, rays, kl_weight, seed, grid_res,
                            ctx.obj["deterministic"])
        log_path = out.with_suffix(".log.jsonl")
        trainer = train_completion if kind == "complete" else train_generation
        ckpt = trainer(scenes, cfg, log_path=log_path)
        save_checkpoint(ckpt, out)
        click.echo(f"wrote {out} (log: {log_path})")

    cmd.__name__ = f"train_{kind}"
    return cmd


train.command("gen")(_train_command("gen"))
train.command("complete")(_train_command("complete"))


# ---------------------------------------------------------------- outputs --

def _emit_field_outputs(out_dir, weights, n_cloud=16384, n_renders=4, seed=0,
                        resolution=64, mesh_resolution=48):
    """Shared artifact writer: colored mesh, resampled cloud, novel renders."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = RenderConfig(step_size=0.01, stratified=False)
    grid = OccupancyGrid.from_field(weights, 32, cfg.tau_sigma)
    mesh = extract_mesh(weights, resolution=mesh_resolution, iso_level=None)
    cameras = icosphere_cameras(width=resolution, height=resolution)
    mesh = color_vertices(mesh, weights, cameras=cameras, render_cfg=cfg, grid=grid)
    save_mesh_ply(out_dir / "mesh.ply", mesh)
    cloud = resample_cloud(weights, n_cloud, seed=seed, mesh=mesh)
    save_cloud_ply(out_dir / "cloud.ply", cloud)
    render_dir = out_dir / "renders"
    render_dir.mkdir(exist_ok=True)
    for i, cam in enumerate(cameras[:n_renders]):
        save_png(render_dir / f"view_{i:03d}.png",
                 render_view(cam, weights, grid, cfg).rgb)
    return mesh, cloud


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--views", default=0, show_default=True,
              help="0 = direct inference; k = fine-tune on the first k views.")
@click.option("--iters", default=200, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@_guard_input_errors
def reconstruct(ckpt, scene, views, iters, out, seed):
    """Reconstruct a scene's cloud to a colored mesh (0-view or sparse-view)."""
    write_manifest(out, "reconstruct",
                   {"ckpt": str(ckpt), "scene": str(scene), "views": views,
                    "iters": iters}, {"ckpt": ckpt, "scene": scene}, seed)
    checkpoint = _load_ckpt(ckpt)
    sc = load_scene(scene)
    if views == 0:
        weights = infer_zero_view(sc.cloud, checkpoint)
    else:
        posed = list(zip(sc.cameras[:views], sc.images[:views]))
        result = finetune_latent(sc.cloud, posed, checkpoint,
                                 FinetuneConfig(iterations=iters, seed=seed))
        weights = result.weights
        click.echo(f"fine-tune loss {result.initial_loss:.5f} -> {result.final_loss:.5f}")
    _emit_field_outputs(out, weights, seed=seed)
    click.echo(f"wrote {out}/mesh.ply, cloud.ply, renders/")


def _axis_plane(axis: str, offset: float) -> SplitPlane:
    normal = {"x": (1.0, 0, 0), "y": (0, 1.0, 0), "z": (0, 0, 1.0)}[axis]
    return SplitPlane(np.asarray(normal), offset)


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--cloud", default=None, type=click.Path(exists=True),
              help="Partial input cloud (default: scene cloud cut by --plane-*).")
@click.option("--plane-axis", default="x", type=click.Choice(["x", "y", "z"]))
@click.option("--plane-offset", default=0.0, show_default=True)
@click.option("--finetune-iters", default=0, show_default=True,
              help="Optimize the missing code on the scene's frames.")
@click.option("--views", default=8, show_default=True,
              help="Frames used when fine-tuning.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def complete(ckpt, scene, cloud, plane_axis, plane_offset, finetune_iters,
             views, seed, out):
    """Complete a partial cloud; optionally fine-tune against captured frames."""
    write_manifest(out, "complete",
                   {"ckpt": str(ckpt), "scene": str(scene), "cloud": cloud and str(cloud),
                    "plane_axis": plane_axis, "plane_offset": plane_offset,
                    "finetune_iters": finetune_iters, "views": views},
                   {"ckpt": ckpt, "scene": scene}, seed)
    checkpoint = _load_ckpt(ckpt)
    sc = load_scene(scene)
    if cloud is not None:
        existing = load_cloud_ply(cloud)
    else:
        existing, _ = split_by_plane(sc.cloud, _axis_plane(plane_axis, plane_offset))
    posed = list(zip(sc.cameras[:views], sc.images[:views])) if finetune_iters else []
    result = finetune_completion(existing, posed, checkpoint,
                                 FinetuneConfig(iterations=finetune_iters, seed=seed),
                                 z_init_seed=seed)
    out = Path(out)
    _emit_field_outputs(out, result.weights, seed=seed)
    np.save(out / "z_missing.npy", result.z.numpy())
    with open(out / "finetune.json", "w") as f:
        json.dump({"initial_loss": result.initial_loss,
                   "final_loss": result.final_loss, "seed": seed}, f, indent=1)
    click.echo(f"wrote {out}/cloud.ply, mesh.ply, z_missing.npy")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--cloud", required=True, type=click.Path(exists=True))
@click.option("--n", default=30000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def upsample(ckpt, cloud, n, seed, out):
    """Up-sample a low-density cloud via zero-view reconstruction."""
    write_manifest(out, "upsample", {"ckpt": str(ckpt), "cloud": str(cloud), "n": n},
                   {"ckpt": ckpt, "cloud": cloud}, seed)
    checkpoint = _load_ckpt(ckpt)
    sparse = load_cloud_ply(cloud)
    weights = infer_zero_view(sparse, checkpoint)
    _emit_field_outputs(out, weights, n_cloud=n, seed=seed)
    click.echo(f"wrote {out}/cloud.ply ({n} points)")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--scene", required=True, type=click.Path(exists=True))
@click.option("--cloud", default=None, type=click.Path(exists=True),
              help="Cloud with holes (default: the scene's cloud).")
@click.option("--iters", default=200, show_default=True)
@click.option("--n", default=16384, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def holefill(ckpt, scene, cloud, iters, n, seed, out):
    """Fill holes: fine-tune the latent on full-coverage frames, then resample."""
    write_manifest(out, "holefill",
                   {"ckpt": str(ckpt), "scene": str(scene), "cloud": cloud and str(cloud),
                    "iters": iters, "n": n}, {"ckpt": ckpt, "scene": scene}, seed)
    checkpoint = _load_ckpt(ckpt)
    sc = load_scene(scene)
    holey = load_cloud_ply(cloud) if cloud is not None else sc.cloud
    posed = list(zip(sc.cameras, sc.images))
    result = finetune_latent(holey, posed, checkpoint,
                             FinetuneConfig(iterations=iters, seed=seed))
    _emit_field_outputs(out, result.weights, n_cloud=n, seed=seed)
    click.echo(f"fine-tune loss {result.initial_loss:.5f} -> {result.final_loss:.5f}; "
               f"wrote {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--cloud", required=True, type=click.Path(exists=True))
@click.option("--views", default=8, show_default=True)
@click.option("--resolution", default=128, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def render(ckpt, cloud, views, resolution, out):
    """Render turntable views of the zero-view field for a cloud."""
    write_manifest(out, "render",
                   {"ckpt": str(ckpt), "cloud": str(cloud), "views": views,
                    "resolution": resolution}, {"ckpt": ckpt, "cloud": cloud})
    checkpoint = _load_ckpt(ckpt)
    weights = infer_zero_view(load_cloud_ply(cloud), checkpoint)
    cfg = RenderConfig(step_size=0.01, stratified=False)
    grid = OccupancyGrid.from_field(weights, 32, cfg.tau_sigma)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .geometry import Camera
    for i in range(views):
        angle = 2 * np.pi * i / views
        pos = 1.5 * np.array([np.cos(angle), np.sin(angle), 0.5])
        pos *= 1.5 / np.linalg.norm(pos)
        cam = Camera.look_at(pos, width=resolution, height=resolution)
        save_png(out / f"view_{i:03d}.png", render_view(cam, weights, grid, cfg).rgb)
    click.echo(f"wrote {views} views to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--cloud-a", required=True, type=click.Path(exists=True))
@click.option("--cloud-b", required=True, type=click.Path(exists=True))
@click.option("--existing", default=None, type=click.Path(exists=True),
              help="Completion checkpoints: fixed existing part.")
@click.option("--steps", default=5, show_default=True)
@click.option("--resolution", default=96, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def interpolate(ckpt, cloud_a, cloud_b, existing, steps, resolution, out):
    """Render fields along the latent line between two clouds."""
    write_manifest(out, "interpolate",
                   {"ckpt": str(ckpt), "cloud_a": str(cloud_a),
                    "cloud_b": str(cloud_b), "existing": existing and str(existing),
                    "steps": steps}, {"ckpt": ckpt, "a": cloud_a, "b": cloud_b})
    checkpoint = _load_ckpt(ckpt)
    model = checkpoint.build_model()
    a = load_cloud_ply(cloud_a)
    b = load_cloud_ply(cloud_b)
    with torch.no_grad():
        if checkpoint.kind == "generation":
            za = model.encode_points(prepare_points(a, checkpoint.config.encoder.n_points, 0)).mean
            zb = model.encode_points(prepare_points(b, checkpoint.config.encoder.n_points, 0)).mean
        else:
            if existing is None:
                raise CheckpointKindError(
                    "completion checkpoint interpolation needs --existing")
            fixed = load_cloud_ply(existing)
            z_e = model.dual.encode_existing(
                prepare_points(fixed, checkpoint.config.encoder.n_points, 0))
            za = torch.cat([z_e, model.dual.encode_missing(
                prepare_points(a, checkpoint.config.encoder_missing.n_points, 0)).mean])
            zb = torch.cat([z_e, model.dual.encode_missing(
                prepare_points(b, checkpoint.config.encoder_missing.n_points, 0)).mean])
    fields = interpolate_latents(za, zb, steps, model.hyper)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .geometry import Camera
    cam = Camera.look_at((1.2, -0.7, 0.6), width=resolution, height=resolution)
    cfg = RenderConfig(step_size=0.01, stratified=False)
    for i, weights in enumerate(fields):
        grid = OccupancyGrid.from_field(weights, 32, cfg.tau_sigma)
        save_png(out / f"step_{i:03d}.png", render_view(cam, weights, grid, cfg).rgb)
    click.echo(f"wrote {steps} interpolation frames to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--part-a", required=True, type=click.Path(exists=True))
@click.option("--part-b", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def stitch(ckpt, part_a, part_b, seed, out):
    """Merge two part clouds into one field (completion checkpoint)."""
    write_manifest(out, "stitch",
                   {"ckpt": str(ckpt), "part_a": str(part_a), "part_b": str(part_b)},
                   {"ckpt": ckpt, "a": part_a, "b": part_b}, seed)
    checkpoint = _load_ckpt(ckpt)
    weights = stitch_parts(load_cloud_ply(part_a), load_cloud_ply(part_b), checkpoint)
    _emit_field_outputs(out, weights, seed=seed)
    click.echo(f"wrote {out}/mesh.ply, cloud.ply")


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--ref", required=True, type=click.Path(exists=True))
@click.option("--mmd", "with_mmd", is_flag=True,
              help="Also report set-level minimum matching distance.")
@click.option("--out", required=True, type=click.Path())
@_guard_input_errors
def eval_cmd(pred, ref, with_mmd, out):
    """Compare prediction and reference directories (clouds and/or images)."""
    write_manifest(out, "eval", {"pred": str(pred), "ref": str(ref),
                                 "mmd": with_mmd}, {"pred": pred, "ref": ref})
    pred, ref = Path(pred), Path(ref)
    report = MetricReport()
    pred_clouds, ref_clouds = [], []
    pairs = _matching_entries(pred, ref)
    if not pairs:
        raise SceneFormatError("no matching scene entries between pred and ref")
    for name, p_dir, r_dir in pairs:
        cd = psnr_val = ssim_val = None
        p_cloud, r_cloud = p_dir / "cloud.ply", r_dir / "cloud.ply"
        if p_cloud.exists() and r_cloud.exists():
            a = load_cloud_ply(p_cloud).positions
            b = load_cloud_ply(r_cloud).positions
            cd = chamfer_normalized(a, b)
            pred_clouds.append(a)
            ref_clouds.append(b)
        p_imgs = sorted((p_dir / "images").glob("*.png")) if (p_dir / "images").is_dir() else \
            sorted((p_dir / "renders").glob("*.png")) if (p_dir / "renders").is_dir() else []
        r_imgs = sorted((r_dir / "images").glob("*.png")) if (r_dir / "images").is_dir() else []
        if p_imgs and r_imgs and len(p_imgs) == len(r_imgs):
            from .dataset import load_png
            ps, ss = [], []
            for pi, ri in zip(p_imgs, r_imgs):
                a, b = load_png(pi), load_png(ri)
                if a.shape != b.shape:
                    continue
                ps.append(psnr(a, b))
                ss.append(ssim(a, b))
            if ps:
                psnr_val, ssim_val = float(np.mean(ps)), float(np.mean(ss))
        report.add_row(name, cd=cd, psnr_value=psnr_val, ssim_value=ssim_val)
    if with_mmd and pred_clouds and ref_clouds:
        report.mmd_value = mmd(pred_clouds, ref_clouds, chamfer_fn=chamfer_normalized)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    click.echo(report.format_table())


def _matching_entries(pred: Path, ref: Path):
    """Pair up scene subdirectories by name; bare directories pair as one row."""
    pred_subs = {p.name: p for p in pred.iterdir() if p.is_dir()}
    ref_subs = {p.name: p for p in ref.iterdir() if p.is_dir()}
    names = sorted(set(pred_subs) & set(ref_subs))
    pairs = [(n, pred_subs[n], ref_subs[n]) for n in names]
    if not pairs and (pred / "cloud.ply").exists() and (ref / "cloud.ply").exists():
        pairs = [(pred.name or "scene", pred, ref)]
    return pairs


if __name__ == "__main__":
    main()
