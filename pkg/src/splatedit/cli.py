"""Command-line driver: locate / init / refine / pipeline / render.

Exit codes partition failures: 0 success, 2 input or config problems,
3 localization found no edit region, 4 initialization emitted no Gaussians,
5 oracle or bridge failure, 6 numeric abort during optimization.

A single JSON config drives pipeline runs; flags override its scalars. Every
run writes a manifest (config snapshot, stage timings, artifact paths, seed,
oracle handshake) atomically at the end, and all randomness flows from one
seed through named substreams.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .depth_init import (
    build_delta_gaussians, calibrate_disparity, depth_from_render,
    disparity_from_render,
)
from .errors import (
    InitializationFailedError, InputError, LocalizationFailedError,
    NumericAbortError, OracleError, SplatEditError, StageError,
)
from .imagefiles import save_pfm, save_png
from .localize import (
    LocalizationConfig, inverse_render_masks, load_mask2d, locate_2d,
    save_mask2d, save_mask3d, select_frontal,
)
from .oracles import default_mock_suite
from .refine import CycleSpec, PipelineConfig, run_cycles, run_pipeline
from .render import render
from .scene import load_camera_manifest, load_ply, merge, save_ply

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_LOCALIZATION = 3
EXIT_INIT = 4
EXIT_ORACLE = 5
EXIT_NUMERIC = 6


def _exit_code(err: Exception) -> int:
    if isinstance(err, LocalizationFailedError):
        return EXIT_LOCALIZATION
    if isinstance(err, InitializationFailedError):
        return EXIT_INIT
    if isinstance(err, (OracleError, StageError)):
        return EXIT_ORACLE
    if isinstance(err, NumericAbortError):
        return EXIT_NUMERIC
    if isinstance(err, (InputError, SplatEditError, FileNotFoundError, OSError,
                        json.JSONDecodeError, ValueError, KeyError)):
        return EXIT_INPUT
    raise err


class Stopwatch:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def time(self, name):
        sw = self

        class _Span:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                sw.timings[name] = sw.timings.get(name, 0.0) + time.perf_counter() - self.t0

        return _Span()


def write_manifest(out_dir: Path, config: dict, timings: dict, artifacts: dict,
                   seed: int, handshake: dict | None) -> Path:
    manifest = {
        "tool": f"splatedit {__version__}",
        "config": config,
        "stage_timings_s": {k: round(v, 4) for k, v in timings.items()},
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "seed": seed,
        "oracle_handshake": handshake if handshake is not None else {"mock": True},
    }
    path = out_dir / "manifest.json"
    tmp = out_dir / ".manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path)
    return path


def parse_config_file(path) -> tuple[str, PipelineConfig]:
    doc = json.loads(Path(path).read_text())
    return parse_config_dict(doc)


def parse_config_dict(doc: dict) -> tuple[str, PipelineConfig]:
    prompt = doc.get("prompt", "")
    cycles = []
    for c in doc.get("cycles", [{"m": 20, "start_t": t, "iters": 500}
                                for t in (750, 500, 250)]):
        cycles.append(CycleSpec(adjacent_m=int(c.get("m", 20)),
                                start_timestep=int(c.get("start_t", 750)),
                                finetune_iters=int(c.get("iters", 500)),
                                guidance_weight=float(doc.get("guidance_w", 7.5))))
    loss = doc.get("loss", {})
    config = PipelineConfig(
        gamma=float(doc.get("gamma", 0.6)),
        tau=int(doc.get("tau", 600)),
        cycles=cycles,
        guidance=float(doc.get("guidance_w", 7.5)),
        seed=int(doc.get("seed", 0)),
        l1_weight=float(loss.get("l1", 1.0)),
        perceptual_weight=float(loss.get("perceptual", 0.2)),
        filter_sigma=float(doc.get("filter_sigma", 3.0)),
        vote_threshold=float(doc.get("vote_threshold", 0.6)),
        background=tuple(doc.get("background", (0.0, 0.0, 0.0))),
        init_stride=int(doc.get("init_stride", 1)),
    )
    return prompt, config


def apply_flag_overrides(prompt: str, config: PipelineConfig,
                         args) -> tuple[str, PipelineConfig]:
    if getattr(args, "prompt", None):
        prompt = args.prompt
    for name in ("gamma", "tau", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(config, name, val)
    if getattr(args, "guidance", None) is not None:
        config.guidance = args.guidance
        for c in config.cycles:
            c.guidance_weight = args.guidance
    if getattr(args, "cycles", None):
        steps = [int(t) for t in args.cycles.split(",") if t.strip()]
        total = args.iters if getattr(args, "iters", None) else 500 * len(steps)
        per = max(1, total // len(steps))
        config.cycles = [CycleSpec(adjacent_m=config.cycles[0].adjacent_m
                                   if config.cycles else 20,
                                   start_timestep=t, finetune_iters=per,
                                   guidance_weight=config.guidance)
                         for t in steps]
    elif getattr(args, "iters", None):
        per = max(1, args.iters // len(config.cycles))
        for c in config.cycles:
            c.finetune_iters = per
    if getattr(args, "m", None) is not None:
        for c in config.cycles:
            c.adjacent_m = args.m
    return prompt, config


def build_oracles(args, scene, cameras, seed):
    """Mock suite or bridge-backed suite; exactly one source must be chosen."""
    if args.mock_oracles and args.bridge_cmd:
        raise InputError("choose either --mock-oracles or --bridge-cmd, not both")
    if args.mock_oracles:
        return default_mock_suite(scene, cameras, seed=seed), None
    if args.bridge_cmd:
        from .remote import BridgeClient, remote_suite
        client = BridgeClient(args.bridge_cmd, workspace=Path(args.out) / "bridge_io")
        return remote_suite(client), client
    raise InputError("an oracle source is required: --mock-oracles or --bridge-cmd")


def _load_scene_and_cameras(args):
    scene = load_ply(args.scene)
    cameras = load_camera_manifest(args.cameras)
    return scene, cameras


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_locate(args) -> int:
    out = _outdir(args)
    scene, cameras = _load_scene_and_cameras(args)
    suite, client = build_oracles(args, scene, cameras, args.seed or 0)
    cfg = LocalizationConfig(tau=args.tau or 600, gamma=0.6 if args.gamma is None else args.gamma,
                             filter_sigma=args.filter_sigma,
                             vote_threshold=args.vote_threshold)
    sw = Stopwatch()
    masks_dir = out / "masks"
    masks_dir.mkdir(exist_ok=True)
    from .oracles import derive_rng
    try:
        with sw.time("locate"):
            masks = []
            for v, cam in enumerate(cameras):
                image = render(scene, cam).color
                seed_v = int(derive_rng(args.seed or 0, "locate", v).integers(0, 2**31 - 1))
                mask = locate_2d(image, args.prompt, suite.noise, cfg,
                                 view_index=v, seed=seed_v)
                save_mask2d(mask, masks_dir / f"view_{v:03d}.png", cfg)
                masks.append(mask)
            v_first = select_frontal(masks)
            mask3d = inverse_render_masks(scene, cameras, masks, cfg)
            save_mask3d(mask3d, out / "mask3d.bin")
            (out / "frontal.json").write_text(json.dumps({
                "frontal_view": v_first,
                "pixel_sums": [m.pixel_sum for m in masks],
                "masked_gaussians": int(mask3d.values.sum()),
            }, indent=2))
    finally:
        if client:
            client.close()
    write_manifest(out, {"prompt": args.prompt, "gamma": cfg.gamma, "tau": cfg.tau},
                   sw.timings, {"masks": masks_dir, "mask3d": out / "mask3d.bin",
                                "frontal": out / "frontal.json"},
                   args.seed or 0, client.handshake if client else None)
    print(f"frontal view {v_first}; masks in {masks_dir}")
    return EXIT_OK


def cmd_init(args) -> int:
    out = _outdir(args)
    scene, cameras = _load_scene_and_cameras(args)
    artifacts = Path(args.artifacts)
    frontal_file = artifacts / "frontal.json"
    if not frontal_file.exists():
        raise InputError(f"missing locate output {frontal_file}")
    v_first = int(json.loads(frontal_file.read_text())["frontal_view"])
    mask_path = artifacts / "masks" / f"view_{v_first:03d}.png"
    if not mask_path.exists():
        raise InputError(f"missing mask file {mask_path}")
    mask = load_mask2d(mask_path)

    suite, client = build_oracles(args, scene, cameras, args.seed or 0)
    sw = Stopwatch()
    try:
        with sw.time("init"):
            cam_f = cameras[v_first]
            original = render(scene, cam_f).color
            try:
                edited = np.asarray(suite.editor.edit(
                    original, original, args.prompt, args.start_t, args.guidance or 7.5),
                    dtype=np.float64)
                disp_u = suite.depth.estimate(original)
                disp_e = suite.depth.estimate(edited)
            except SplatEditError:
                raise
            except Exception as e:
                raise StageError("init", str(e), v_first) from e
            rendered = render(scene, cam_f)
            cal = calibrate_disparity(
                disp_u, disparity_from_render(rendered.depth, rendered.alpha))
            delta = build_delta_gaussians(
                edited, mask, disp_e, disp_u,
                depth_from_render(rendered.depth, rendered.alpha), cam_f, cal,
                stride=args.stride)
            merged = merge(scene, delta)
            save_png(edited, out / "frontal_edited.png")
            save_ply(merged, out / "initialized.ply")
    finally:
        if client:
            client.close()
    write_manifest(out, {"prompt": args.prompt, "frontal_view": v_first,
                         "delta_count": len(delta), "stride": args.stride},
                   sw.timings, {"scene": out / "initialized.ply"},
                   args.seed or 0, client.handshake if client else None)
    print(f"added {len(delta)} Gaussians; wrote {out / 'initialized.ply'}")
    return EXIT_OK


def _artifact_writer(out: Path, loc_cfg: LocalizationConfig | None = None):
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "coarse").mkdir(exist_ok=True)
    (out / "refined").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)

    def hook(kind, name, payload):
        if kind == "mask":
            save_mask2d(payload, out / "masks" / f"{name}.png", loc_cfg)
        elif kind == "mask3d":
            save_mask3d(payload, out / "mask3d.bin")
        elif kind == "image":
            sub = "coarse" if "coarse" in name else "refined"
            save_png(payload, out / sub / f"{name}.png")
        elif kind == "cloud":
            save_ply(payload, out / "checkpoints" / f"{name}.ply")

    return hook


def cmd_pipeline(args) -> int:
    out = _outdir(args)
    if args.config:
        prompt, config = parse_config_file(args.config)
    else:
        prompt, config = parse_config_dict({})
    prompt, config = apply_flag_overrides(prompt, config, args)
    if not prompt:
        raise InputError("a prompt is required (config 'prompt' or --prompt)")
    scene, cameras = _load_scene_and_cameras(args)
    suite, client = build_oracles(args, scene, cameras, config.seed)
    sw = Stopwatch()
    try:
        with sw.time("pipeline"):
            result = run_pipeline(
                scene, cameras, prompt, config, suite,
                artifact_hook=_artifact_writer(out, config.localization()))
        with sw.time("save"):
            save_ply(result.cloud, out / "final.ply")
            (out / "frontal.json").write_text(json.dumps({
                "frontal_view": result.frontal_view,
                "pixel_sums": [m.pixel_sum for m in result.masks],
                "masked_gaussians": int(result.mask3d.values.sum()),
            }, indent=2))
    finally:
        if client:
            client.close()
    config_snapshot = {
        "prompt": prompt, "gamma": config.gamma, "tau": config.tau,
        "guidance_w": config.guidance, "seed": config.seed,
        "cycles": [{"m": c.adjacent_m, "start_t": c.start_timestep,
                    "iters": c.finetune_iters} for c in config.cycles],
        "loss": {"l1": config.l1_weight, "perceptual": config.perceptual_weight},
        "init_stride": config.init_stride,
    }
    write_manifest(out, config_snapshot, sw.timings,
                   {"final": out / "final.ply", "frontal_view": result.frontal_view,
                    "delta_count": result.delta_count},
                   config.seed, client.handshake if client else None)
    print(f"pipeline complete: {out / 'final.ply'}")
    return EXIT_OK


def cmd_refine(args) -> int:
    out = _outdir(args)
    if args.config:
        prompt, config = parse_config_file(args.config)
    else:
        prompt, config = parse_config_dict({})
    prompt, config = apply_flag_overrides(prompt, config, args)
    if not prompt:
        raise InputError("a prompt is required (config 'prompt' or --prompt)")

    cloud = load_ply(args.scene)
    source = load_ply(args.source_scene) if args.source_scene else cloud
    cameras = load_camera_manifest(args.cameras)
    artifacts = Path(args.artifacts)
    frontal_file = artifacts / "frontal.json"
    if not frontal_file.exists():
        raise InputError(f"missing locate output {frontal_file}")
    report = json.loads(frontal_file.read_text())
    v_first = int(report["frontal_view"])
    mask_sums = report["pixel_sums"]

    suite, client = build_oracles(args, source, cameras, config.seed)
    originals = [render(source, cam, config.background).color for cam in cameras]
    edited_path = artifacts / "frontal_edited.png"
    initial = {}
    if edited_path.exists():
        from .imagefiles import load_png
        initial[v_first] = load_png(edited_path)
    sw = Stopwatch()
    try:
        with sw.time("refine"):
            final, _ = run_cycles(cloud, cameras, originals, mask_sums, v_first,
                                  initial, prompt, config, suite,
                                  artifact_hook=_artifact_writer(out))
        save_ply(final, out / "final.ply")
    finally:
        if client:
            client.close()
    write_manifest(out, {"prompt": prompt, "seed": config.seed}, sw.timings,
                   {"final": out / "final.ply"}, config.seed,
                   client.handshake if client else None)
    print(f"refinement complete: {out / 'final.ply'}")
    return EXIT_OK


def cmd_render(args) -> int:
    out = _outdir(args)
    scene = load_ply(args.scene)
    cameras = load_camera_manifest(args.cameras)
    bg = tuple(float(x) for x in args.background.split(",")) if args.background \
        else (0.0, 0.0, 0.0)
    sw = Stopwatch()
    with sw.time("render"):
        for v, cam in enumerate(cameras):
            result = render(scene, cam, bg)
            stem = cam.name or f"view_{v:03d}"
            save_png(result.color, out / f"{stem}.png")
            save_pfm(result.depth, out / f"{stem}_depth.pfm")
            save_pfm(result.alpha, out / f"{stem}_alpha.pfm")
    write_manifest(out, {"background": list(bg)}, sw.timings,
                   {"frames": out}, args.seed or 0, None)
    print(f"rendered {len(cameras)} views to {out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatedit",
        description="Localized editing of 3D Gaussian splat scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, oracle=True):
        p.add_argument("--scene", required=True, help="scene PLY")
        p.add_argument("--cameras", required=True, help="camera manifest JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if oracle:
            p.add_argument("--mock-oracles", action="store_true",
                           help="use deterministic built-in mock oracles")
            p.add_argument("--bridge-cmd", default=None,
                           help="command line that starts an oracle bridge")

    p = sub.add_parser("locate", help="2D masks + 3D mask from noise differences")
    common(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--filter-sigma", type=float, default=3.0)
    p.add_argument("--vote-threshold", type=float, default=0.6)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("init", help="depth-calibrated Gaussian initialization")
    common(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--artifacts", required=True, help="locate output directory")
    p.add_argument("--start-t", dest="start_t", type=int, default=750)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("refine", help="run refinement cycles on an initialized scene")
    common(p)
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--artifacts", required=True, help="locate/init output directory")
    p.add_argument("--source-scene", default=None, help="unedited source PLY")
    p.add_argument("--prompt", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--cycles", default=None, help='start timesteps, e.g. "750,500,250"')
    p.add_argument("--iters", type=int, default=None, help="total iterations")
    p.add_argument("--guidance", type=float, default=None)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("pipeline", help="locate + init + refine in one run")
    common(p)
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--prompt", default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--cycles", default=None, help='start timesteps, e.g. "750,500,250"')
    p.add_argument("--iters", type=int, default=None, help="total iterations")
    p.add_argument("--guidance", type=float, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("render", help="render color/depth/alpha for every view")
    common(p, oracle=False)
    p.add_argument("--background", default=None, help='e.g. "0,0,0"')
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except Exception as e:  # map to the documented exit-code partition
        code = _exit_code(e)
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
