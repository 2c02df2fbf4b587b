"""Layered synthetic videos with exact ground-truth depth.

Scenes are a textured background plane plus moving rectangle/disk layers
at fixed depths; the depth map records the front-most layer per pixel, so
warping has no depth-estimation error by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .codec import CodecSpec
from .geometry import CameraIntrinsics, CameraTrajectory, make_trajectory
from .masks import latent_mask_training_free


class SceneError(ValueError):
    pass


@dataclass
class LayerSpec:
    depth: float                  # scene units, must increase back-to-front
    shape: str                    # "rectangle" | "disk"
    color: tuple                  # rgb in [0,1]
    center: tuple                 # (u, v) pixels at frame 0
    size: float                   # half-extent / radius in pixels
    velocity: tuple = (0.0, 0.0)  # (du, dv) pixels per frame

    def __post_init__(self):
        if self.shape not in ("rectangle", "disk"):
            raise SceneError(f"unknown layer shape {self.shape!r}")
        if self.depth <= 0:
            raise SceneError("layer depth must be positive")


@dataclass
class SceneSpec:
    seed: int = 0
    layers: list[LayerSpec] = field(default_factory=list)
    background: str = "gradient"     # "flat" | "gradient" | "checker"
    background_depth: float = 4.0
    background_color: tuple = (0.35, 0.4, 0.45)

    def __post_init__(self):
        depths = [l.depth for l in self.layers]
        if any(d >= self.background_depth for d in depths):
            raise SceneError("layers must sit in front of the background")
        if sorted(depths) != depths:
            # keep a defined back-to-front order
            self.layers = sorted(self.layers, key=lambda l: l.depth)


def _background(spec: SceneSpec, height: int, width: int) -> np.ndarray:
    base = np.asarray(spec.background_color, dtype=np.float64)
    frame = np.broadcast_to(base, (height, width, 3)).copy()
    if spec.background == "flat":
        return frame
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    if spec.background == "gradient":
        ramp = 0.5 * (u / max(width - 1, 1) + v / max(height - 1, 1))
        return np.clip(frame * (0.6 + 0.8 * ramp[..., None]), 0.0, 1.0)
    if spec.background == "checker":
        tiles = (((u // 4) + (v // 4)) % 2)[..., None]
        return np.clip(frame * (0.7 + 0.6 * tiles), 0.0, 1.0)
    raise SceneError(f"unknown background kind {spec.background!r}")


def _check_inside(layer: LayerSpec, frames: int, height: int, width: int):
    for i in (0, frames - 1):
        cu = layer.center[0] + layer.velocity[0] * i
        cv = layer.center[1] + layer.velocity[1] * i
        if (cu - layer.size < 1 or cu + layer.size > width - 2
                or cv - layer.size < 1 or cv + layer.size > height - 2):
            raise SceneError(
                f"layer leaves the frame (center {(cu, cv)}, size {layer.size})")


def gen_moving_shapes(spec: SceneSpec, frames: int, height: int, width: int):
    """Rasterize the scene back-to-front; returns (video, depth)."""
    if frames < 1 or height < 1 or width < 1:
        raise SceneError("invalid dims")
    for layer in spec.layers:
        _check_inside(layer, frames, height, width)
    bg = _background(spec, height, width)
    video = np.empty((frames, height, width, 3))
    depth = np.empty((frames, height, width))
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    for i in range(frames):
        frame = bg.copy()
        dframe = np.full((height, width), spec.background_depth)
        for layer in sorted(spec.layers, key=lambda l: -l.depth):
            cu = layer.center[0] + layer.velocity[0] * i
            cv = layer.center[1] + layer.velocity[1] * i
            if layer.shape == "rectangle":
                hit = (np.abs(u - cu) <= layer.size) & \
                      (np.abs(v - cv) <= layer.size)
            else:
                hit = (u - cu) ** 2 + (v - cv) ** 2 <= layer.size ** 2
            frame[hit] = layer.color
            dframe[hit] = layer.depth
        video[i] = frame
        depth[i] = dframe
    return video, depth


def random_scene(seed: int, n_layers: int = 2, height: int = 32,
                 width: int = 32, max_speed: float = 1.0) -> SceneSpec:
    """Random layered scene; deterministic given seed."""
    rng = np.random.default_rng(seed)
    layers = []
    depths = np.sort(rng.uniform(0.8, 2.5, size=n_layers))
    for j in range(n_layers):
        size = float(rng.uniform(2.0, min(height, width) / 6))
        # leave room for 8 frames of travel; shrink speed on tiny grids
        speed = max_speed
        while size + 2 + speed * 8 > min(height, width) / 2 - 1 and speed > 0.01:
            speed *= 0.5
        margin = size + 2 + speed * 8
        layers.append(LayerSpec(
            depth=float(depths[j]),
            shape=str(rng.choice(["rectangle", "disk"])),
            color=tuple(rng.uniform(0.1, 0.95, size=3)),
            center=(float(rng.uniform(margin, width - margin)),
                    float(rng.uniform(margin, height - margin))),
            size=size,
            velocity=(float(rng.uniform(-speed, speed)),
                      float(rng.uniform(-speed, speed))),
        ))
    bg = str(rng.choice(["flat", "gradient", "checker"]))
    return SceneSpec(seed=seed, layers=layers, background=bg)


def default_intrinsics(height: int, width: int) -> CameraIntrinsics:
    return CameraIntrinsics(fx=float(width), fy=float(width),
                            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


def scene_trajectory(kind: str, magnitude: float, frames: int,
                     depth: np.ndarray,
                     intrinsics: CameraIntrinsics) -> CameraTrajectory:
    """Trajectory with the arc pivot at the first frame's median depth."""
    pivot = float(np.median(depth[0]))
    return make_trajectory(kind, magnitude, frames, intrinsics,
                           pivot_depth=pivot)


def gen_training_set(n: int, base_seed: int, dims: tuple,
                     trajectory_pool: list[tuple], out_dir: str,
                     codec_spec: CodecSpec, max_speed: float = 1.0) -> dict:
    """Write (x, m*x, m, depth, h_gt) sample directories plus a manifest.

    Each of the n scenes is paired with every (kind, magnitude) in the
    trajectory pool; masked videos come from double reprojection and h_gt
    from the training-free latent mask. Returns the manifest dict.
    """
    from .geometry import double_reproject

    if n < 1:
        raise SceneError("need at least one scene")
    frames, height, width = dims
    intr = default_intrinsics(height, width)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n):
        scene = random_scene(base_seed + i, height=height, width=width,
                             max_speed=max_speed)
        video, depth = gen_moving_shapes(scene, frames, height, width)
        for kind, magnitude in trajectory_pool:
            traj = scene_trajectory(kind, magnitude, frames, depth, intr)
            masked, mask = double_reproject(video, depth, traj)
            h_gt = latent_mask_training_free(video, mask, codec_spec)
            name = f"sample_{i:04d}_{kind}_{magnitude:g}"
            sdir = os.path.join(out_dir, name)
            os.makedirs(sdir, exist_ok=True)
            files = {}
            for fname, arr in (("video", video), ("masked", masked),
                               ("mask", mask), ("depth", depth),
                               ("hgt", h_gt)):
                path = os.path.join(sdir, f"{fname}.bt")
                tensorio.write_tensor(path, arr)
                files[f"{fname}.bt"] = tensorio.sha256_file(path)
            meta = {"scene_seed": scene.seed, "kind": kind,
                    "magnitude": magnitude, "dims": list(dims),
                    "files": files}
            with open(os.path.join(sdir, "sample.json"), "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)
            entries.append({"name": name, "files": files})
    manifest = {"count": len(entries), "base_seed": base_seed,
                "dims": list(dims), "samples": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_sample(sample_dir: str) -> dict:
    out = {}
    for name in ("video", "masked", "mask", "depth", "hgt"):
        out[name] = tensorio.read_tensor(
            os.path.join(sample_dir, f"{name}.bt")).astype(np.float64)
    with open(os.path.join(sample_dir, "sample.json")) as fh:
        out["meta"] = json.load(fh)
    return out
