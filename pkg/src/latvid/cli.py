"""Command-line interface.

Subcommands cover the full loop: synthesize data, train the codec / prior /
mask encoder, form warped measurements, run the solver, sweep ablations and
evaluate runs. Exit codes: 0 success, 1 usage error, 2 runtime failure.
The LIC_LOG environment variable (error|info|debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__, report, tensorio
from .codec import (CodecError, TrainingConfig, load_codec, make_linear_codec,
                    save_codec, train_codec)
from .flow import GaussianAnalytic, load_flow, save_flow, train_flow
from .geometry import load_trajectory, save_trajectory
from .masks import (load_mask_encoder, save_mask_encoder, train_mask_encoder)
from .metrics import masked_psnr
from .solver import (MaskSource, SolverConfig, solve_latent_inpaint,
                     solve_pixel_dds)
from .synthdata import (default_intrinsics, gen_moving_shapes,
                        gen_training_set, load_sample, random_scene,
                        scene_trajectory)

log = logging.getLogger("latvid")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; this tool reserves 2 for runtime errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _setup_logging(level_name: str | None):
    name = (level_name or os.environ.get("LIC_LOG") or "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if name not in levels:
        raise UsageError(f"unknown log level {name!r}")
    logging.basicConfig(level=levels[name],
                        format="%(levelname)s %(name)s: %(message)s")


def _apply_config_file(args: argparse.Namespace):
    """JSON config supplies values for flags the user left unset."""
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must contain a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"config key {key!r} is not a known option")
        if getattr(args, attr) is None:   # explicit flags win
            setattr(args, attr, value)


def _defaults(args: argparse.Namespace, **fallbacks):
    for key, value in fallbacks.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _parse_trajectory_pool(text: str) -> list[tuple]:
    pool = []
    for item in text.split(","):
        kind, _, mag = item.partition(":")
        if not mag:
            raise UsageError(
                f"trajectory {item!r} must look like kind:magnitude")
        pool.append((kind.strip(), float(mag)))
    return pool


def _load_codec_arg(args) -> "CodecSpec":
    if getattr(args, "codec", None):
        return load_codec(args.codec)
    return make_linear_codec(args.rt, args.rs, args.channels)


def _load_dataset(data_dir: str) -> list[dict]:
    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise UsageError(f"{data_dir} has no manifest.json; run `synth` first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return [load_sample(os.path.join(data_dir, e["name"]))
            for e in manifest["samples"]]


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    _defaults(args, n=4, seed=0, frames=8, height=32, width=32,
              trajectories="zoom_in:0.25,arc_left:0.15", max_speed=1.0,
              rt=2, rs=4, channels=12)
    spec = _load_codec_arg(args)
    pool = _parse_trajectory_pool(args.trajectories)
    manifest = gen_training_set(
        args.n, args.seed, (args.frames, args.height, args.width), pool,
        args.out, spec, max_speed=args.max_speed)
    log.info("wrote %d samples to %s", manifest["count"], args.out)
    print(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_train_codec(args) -> int:
    _defaults(args, epochs=30, batch_size=64, lr=1e-3, weight_decay=0.0,
              seed=0, rt=2, rs=4, channels=12, hidden=256)
    samples = _load_dataset(args.data)
    videos = [s["video"] for s in samples]
    cfg = TrainingConfig(epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, weight_decay=args.weight_decay,
                         seed=args.seed)
    spec = train_codec(videos, cfg, rt=args.rt, rs=args.rs,
                       channels=args.channels, hidden=args.hidden)
    save_codec(spec, args.out)
    log.info("codec trained: final loss %.3e over %d epochs",
             spec.final_loss, args.epochs)
    print(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_train_flow(args) -> int:
    _defaults(args, epochs=50, batch_size=16, lr=1e-3, weight_decay=0.0,
              seed=0, hidden=128)
    spec = load_codec(args.codec)
    from .codec import encode
    samples = _load_dataset(args.data)
    latents = [encode(spec, s["video"]) for s in samples]
    cfg = TrainingConfig(epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, weight_decay=args.weight_decay,
                         seed=args.seed)
    model = train_flow(latents, cfg, hidden=args.hidden)
    save_flow(model, args.out)
    log.info("flow trained: final loss %.3e", model.final_loss)
    print(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_train_maskenc(args) -> int:
    _defaults(args, epochs=50, lr=1e-4, weight_decay=3e-2, seed=0,
              hidden=128, ssim_weight=0.2)
    spec = load_codec(args.codec)
    samples = _load_dataset(args.data)
    pairs = [(s["masked"], s["mask"], s["hgt"]) for s in samples]
    cfg = TrainingConfig(epochs=args.epochs, batch_size=1, lr=args.lr,
                         weight_decay=args.weight_decay, seed=args.seed)
    params = train_mask_encoder(pairs, cfg, rt=spec.rt, rs=spec.rs,
                                channels=spec.channels, hidden=args.hidden,
                                ssim_weight=args.ssim_weight)
    save_mask_encoder(params, args.out)
    log.info("mask encoder trained: final loss %.4f",
             params.loss_history[-1])
    print(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_warp(args) -> int:
    _defaults(args, scene_seed=0, frames=8, height=32, width=32,
              kind="zoom_in", magnitude=0.25)
    from .geometry import double_reproject
    if args.video:
        if not (args.depth and args.traj):
            raise UsageError("--video needs --depth and --traj")
        video = tensorio.read_tensor(args.video).astype(np.float64)
        depth = tensorio.read_tensor(args.depth).astype(np.float64)
        traj = load_trajectory(args.traj)
    else:
        scene = random_scene(args.scene_seed, height=args.height,
                             width=args.width)
        video, depth = gen_moving_shapes(scene, args.frames, args.height,
                                         args.width)
        intr = default_intrinsics(args.height, args.width)
        traj = scene_trajectory(args.kind, args.magnitude, args.frames,
                                depth, intr)
    y, m = double_reproject(video, depth, traj)
    os.makedirs(args.out, exist_ok=True)
    for name, arr in (("video", video), ("depth", depth), ("y", y),
                      ("mask", m)):
        tensorio.write_tensor(os.path.join(args.out, f"{name}.bt"), arr)
    save_trajectory(os.path.join(args.out, "trajectory.json"), traj)
    coverage = float(m.mean())
    log.info("warp coverage: %.1f%% of pixels observed", 100 * coverage)
    print(f"{args.out} coverage={coverage:.4f}")
    return EXIT_OK


def _prior_from_args(args, spec):
    if getattr(args, "flow", None):
        return load_flow(args.flow)
    mean = args.prior_mean if args.prior_mean is not None else 0.0
    var = args.prior_var if args.prior_var is not None else 1.0
    return GaussianAnalytic(np.float64(mean) * np.ones(1),
                            np.float64(var) * np.ones(1))


def _mask_source_from_args(args):
    kind = args.mask_source or "training_free"
    if kind == "training_free":
        if not args.x_src:
            raise UsageError("mask source training_free needs --x-src")
        return MaskSource.training_free(
            tensorio.read_tensor(args.x_src).astype(np.float64))
    if kind == "encoder":
        if not args.maskenc:
            raise UsageError("mask source encoder needs --maskenc")
        return MaskSource.from_encoder(load_mask_encoder(args.maskenc))
    if kind == "binary":
        return MaskSource.binary_baseline()
    if kind == "explicit":
        if not args.h:
            raise UsageError("mask source explicit needs --h")
        return MaskSource.explicit(
            tensorio.read_tensor(args.h).astype(np.float64))
    raise UsageError(f"unknown mask source {kind!r}")


def _solver_config(args) -> SolverConfig:
    _defaults(args, alpha=0.6, gamma=1.0, cg_iters=5, steps=50, seed=0,
              backend="cg")
    try:
        return SolverConfig(alpha=args.alpha, gamma=args.gamma,
                            cg_iters=args.cg_iters, steps=args.steps,
                            seed=args.seed, backend=args.backend)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_solve(args) -> int:
    _defaults(args, rt=2, rs=4, channels=12)
    spec = _load_codec_arg(args)
    y = tensorio.read_tensor(args.y).astype(np.float64)
    m = tensorio.read_tensor(args.mask).astype(np.float64)
    cfg = _solver_config(args)
    model = _prior_from_args(args, spec)
    checkpoints = {}
    if args.codec:
        checkpoints["codec"] = tensorio.sha256_file(
            os.path.join(args.codec, "manifest.json"))
    if getattr(args, "flow", None):
        checkpoints["flow"] = tensorio.sha256_file(
            os.path.join(args.flow, "manifest.json"))
    if args.pixel:
        result = solve_pixel_dds(y, m, model, spec, cfg)
        kind, src_kind = "pixel", "none"
    else:
        source = _mask_source_from_args(args)
        result = solve_latent_inpaint(y, m, source, model, spec, cfg)
        kind, src_kind = "latent", source.kind
    report.write_run(args.out, result, cfg, y, m, src_kind,
                     solver_kind=kind, checkpoints=checkpoints)
    rep = report.eval_report(args.out)
    log.info("solve done: measurement PSNR %s dB",
             "inf" if rep["exact_match"] else f"{rep['measurement_psnr']:.2f}")
    print(os.path.join(args.out, "report.json"))
    return EXIT_OK


def cmd_eval(args) -> int:
    rep = report.eval_report(args.run)
    print(json.dumps(rep, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_frames(args) -> int:
    _defaults(args, format="ppm")
    video = tensorio.read_tensor(args.video).astype(np.float64)
    paths = tensorio.export_frames(video, args.out, fmt=args.format)
    log.info("exported %d frames to %s", len(paths), args.out)
    print("\n".join(paths))
    return EXIT_OK


def cmd_ablate(args) -> int:
    _defaults(args, rt=2, rs=4, channels=12)
    spec = _load_codec_arg(args)
    y = tensorio.read_tensor(args.y).astype(np.float64)
    m = tensorio.read_tensor(args.mask).astype(np.float64)
    model = _prior_from_args(args, spec)
    os.makedirs(args.out, exist_ok=True)
    base = _solver_config(args)
    rows = []

    if args.sweep == "alpha":
        values = [float(v) for v in (args.values or "0,0.3,0.6,1.0").split(",")]
        source = _mask_source_from_args(args)
        for a in values:
            cfg = SolverConfig(alpha=a, gamma=base.gamma,
                               cg_iters=base.cg_iters, steps=base.steps,
                               seed=base.seed, backend=base.backend)
            run_dir = os.path.join(args.out, f"alpha_{a:g}")
            result = solve_latent_inpaint(y, m, source, model, spec, cfg)
            report.write_run(run_dir, result, cfg, y, m, source.kind)
            rep = report.eval_report(run_dir)
            rows.append({"alpha": a,
                         "measurement_psnr": rep["measurement_psnr"],
                         "ssim": rep["ssim"],
                         "mask_mean": rep["mask_mean"]})
            log.info("alpha=%g: PSNR %s", a, rep["measurement_psnr"])
        report.write_csv(os.path.join(args.out, "alpha_sweep.csv"), rows)
        report.plot_alpha_sweep(rows, os.path.join(args.out,
                                                   "alpha_sweep.png"))
        print(os.path.join(args.out, "alpha_sweep.csv"))
        return EXIT_OK

    if args.sweep == "mask":
        if not args.x_src:
            raise UsageError("mask sweep needs --x-src for ground truth")
        x_src = tensorio.read_tensor(args.x_src).astype(np.float64)
        sources = [MaskSource.training_free(x_src),
                   MaskSource.binary_baseline()]
        if args.maskenc:
            sources.append(
                MaskSource.from_encoder(load_mask_encoder(args.maskenc)))
        hole = 1.0 - m
        for source in sources:
            run_dir = os.path.join(args.out, f"mask_{source.kind}")
            result = solve_latent_inpaint(y, m, source, model, spec, base)
            report.write_run(run_dir, result, base, y, m, source.kind)
            rep = report.eval_report(run_dir)
            recon = (masked_psnr(result.video, x_src, hole)
                     if hole.any() else float("nan"))
            rows.append({"mask_source": source.kind,
                         "reconstruction_psnr": recon,
                         "measurement_psnr": rep["measurement_psnr"],
                         "mask_mean": rep["mask_mean"]})
            log.info("mask=%s: recon PSNR %.2f", source.kind, recon)
        report.write_csv(os.path.join(args.out, "mask_sweep.csv"), rows)
        report.plot_mask_ablation(rows, os.path.join(args.out,
                                                     "mask_sweep.png"))
        print(os.path.join(args.out, "mask_sweep.csv"))
        return EXIT_OK

    if args.sweep == "pixel":
        source = _mask_source_from_args(args)
        runs = [("latent", lambda: solve_latent_inpaint(
                    y, m, source, model, spec, base)),
                ("pixel", lambda: solve_pixel_dds(y, m, model, spec, base))]
        for kind, run in runs:
            run_dir = os.path.join(args.out, f"solver_{kind}")
            result = run()
            report.write_run(run_dir, result, base, y, m,
                             source.kind if kind == "latent" else "none",
                             solver_kind=kind)
            rep = report.eval_report(run_dir)
            timing = rep["timing"]
            n_cons = max(timing["consistency_steps"], 1)
            rows.append({"solver": kind,
                         "measurement_psnr": rep["measurement_psnr"],
                         "per_consistency_step_ms":
                             timing["per_consistency_step_ms"],
                         "codec_ms_per_step": timing["codec_ms"] / n_cons,
                         "total_ms": timing["total_ms"]})
            log.info("solver=%s: %.2f ms/consistency step", kind,
                     timing["per_consistency_step_ms"])
        report.write_csv(os.path.join(args.out, "pixel_sweep.csv"), rows)
        report.plot_step_timing(rows, os.path.join(args.out,
                                                   "pixel_sweep.png"))
        print(os.path.join(args.out, "pixel_sweep.csv"))
        return EXIT_OK

    raise UsageError(f"unknown sweep {args.sweep!r}")


# -- parser -----------------------------------------------------------------

def _add_training_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)


def _add_solver_flags(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--cg-iters", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["cg", "closed_form"])
    p.add_argument("--flow", help="flow checkpoint dir (default: analytic prior)")
    p.add_argument("--prior-mean", type=float)
    p.add_argument("--prior-var", type=float)
    p.add_argument("--mask-source",
                   choices=["training_free", "encoder", "binary", "explicit"])
    p.add_argument("--x-src", help="source video for the training-free mask")
    p.add_argument("--maskenc", help="mask encoder checkpoint dir")
    p.add_argument("--h", help="explicit latent mask tensor")


def build_parser() -> _Parser:
    parser = _Parser(prog="latvid",
                     description="latent video inpainting toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log", choices=["error", "info", "debug"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--trajectories")
    p.add_argument("--max-speed", type=float)
    p.add_argument("--codec")
    p.add_argument("--rt", type=int)
    p.add_argument("--rs", type=int)
    p.add_argument("--channels", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-codec", help="train the MLP autoencoder codec")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_training_flags(p)
    p.add_argument("--rt", type=int)
    p.add_argument("--rs", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-flow", help="train the flow prior on latents")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_training_flags(p)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("train-maskenc", help="train the latent mask encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_training_flags(p)
    p.add_argument("--hidden", type=int)
    p.add_argument("--ssim-weight", type=float)
    p.set_defaults(func=cmd_train_maskenc)

    p = sub.add_parser("warp", help="form a warped measurement")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--video")
    p.add_argument("--depth")
    p.add_argument("--traj")
    p.add_argument("--scene-seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--kind")
    p.add_argument("--magnitude", type=float)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("solve", help="run the inpainting solver")
    p.add_argument("--y", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--codec", help="codec checkpoint dir (default: linear)")
    p.add_argument("--rt", type=int)
    p.add_argument("--rs", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--pixel", action="store_true",
                   help="pixel-space consistency baseline")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ablate", help="parameter sweeps with CSV + figures")
    p.add_argument("--sweep", required=True,
                   choices=["alpha", "mask", "pixel"])
    p.add_argument("--y", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--codec", help="codec checkpoint dir (default: linear)")
    p.add_argument("--rt", type=int)
    p.add_argument("--rs", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--values", help="comma-separated sweep values")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="recompute report.json for a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-frames", help="dump a video tensor as images")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["ppm", "png"])
    p.set_defaults(func=cmd_export_frames)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.log)
        _apply_config_file(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        logging.getLogger("latvid").error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
