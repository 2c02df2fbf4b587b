"""Continuous latent masks.

Three routes from a pixel mask to per-channel latent weights in [0,1]:
the training-free encoding-difference projection, a small learned mask
encoder, and the conventional binary downsampling baseline.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .codec import CodecSpec, TrainingConfig, encode, infill
from .metrics import ssim_and_grad
from .nn import MLP, AdamW

TAU_PERCENTILE = 95.0
TAU_FLOOR = 1e-8
DEFAULT_SSIM_WEIGHT = 0.2


class MaskError(ValueError):
    pass


def normalize_diff(diff: np.ndarray) -> np.ndarray:
    """Map a latent difference to [0,1] weights via h = exp(-|d| / tau).

    tau is the 95th percentile of |d| over non-negligible entries (floor
    1e-8), so a zero difference maps to exactly 1 and larger differences
    decay monotonically.
    """
    diff = np.asarray(diff, dtype=np.float64)
    if not np.all(np.isfinite(diff)):
        raise MaskError("difference tensor has non-finite entries")
    mag = np.abs(diff)
    sig = mag[mag > 1e-12]
    tau = float(np.percentile(sig, TAU_PERCENTILE)) if sig.size else 0.0
    tau = max(tau, TAU_FLOOR)
    return np.exp(-mag / tau)


def latent_mask_training_free(x_src: np.ndarray, m: np.ndarray,
                              spec: CodecSpec) -> np.ndarray:
    """h from the encoding difference of the source and its masked infill."""
    x_src = np.asarray(x_src, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    masked = infill(x_src * m[..., None], m)
    return normalize_diff(encode(spec, x_src) - encode(spec, masked))


def binary_downsample_mask(m: np.ndarray, spec: CodecSpec) -> np.ndarray:
    """Conservative binary baseline: a latent cell is known only if every
    pixel of its (rt x rs x rs) group is known; broadcast to all channels."""
    m = np.asarray(m, dtype=np.float64)
    frames, height, width = m.shape
    spec.check_dims(frames, height, width)
    f, h, w = frames // spec.rt, height // spec.rs, width // spec.rs
    grouped = m.reshape(f, spec.rt, h, spec.rs, w, spec.rs)
    cells = grouped.min(axis=(1, 3, 5))
    cells = (cells > 0).astype(np.float64)
    return np.broadcast_to(cells, (spec.channels, f, h, w)).copy()


# -- learned mask encoder ---------------------------------------------------

@dataclass
class MaskEncoderParams:
    rt: int
    rs: int
    channels: int
    net: MLP                       # patch features -> 128 -> C, sigmoid out
    ssim_weight: float = DEFAULT_SSIM_WEIGHT
    seed: int = 0
    epochs: int = 0
    loss_history: list[float] | None = None

    @property
    def feature_dim(self) -> int:
        return self.rt * self.rs * self.rs * 4   # 3 color + 1 mask channel


def make_mask_encoder(rt: int, rs: int, channels: int, hidden: int = 128,
                      seed: int = 0,
                      ssim_weight: float = DEFAULT_SSIM_WEIGHT) -> MaskEncoderParams:
    feature_dim = rt * rs * rs * 4
    rng = np.random.default_rng(seed)
    net = MLP([feature_dim, hidden, channels], ["softplus", "sigmoid"], rng)
    return MaskEncoderParams(rt, rs, channels, net,
                             ssim_weight=ssim_weight, seed=seed)


def _features(params: MaskEncoderParams, y: np.ndarray, m: np.ndarray):
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    frames, height, width = m.shape
    if y.shape[:3] != m.shape:
        raise MaskError("measurement and mask dims disagree")
    if frames % params.rt or height % params.rs or width % params.rs:
        raise MaskError("dims not divisible by patch factors")
    rt, rs = params.rt, params.rs
    f, h, w = frames // rt, height // rs, width // rs

    def patchify(arr, ch):
        p = arr.reshape(f, rt, h, rs, w, rs, ch)
        return p.transpose(0, 2, 4, 1, 3, 5, 6).reshape(f * h * w, -1)

    feats = np.concatenate(
        [patchify(y, 3), patchify(m[..., None], 1)], axis=1)
    return feats, (f, h, w)


def mask_encoder_forward(params: MaskEncoderParams, y: np.ndarray,
                         m: np.ndarray) -> np.ndarray:
    """Predict a continuous (C, f, h, w) latent mask from (y, m) patches."""
    for p in params.net.params:
        if not np.all(np.isfinite(p)):
            raise MaskError("mask encoder has non-finite parameters")
    feats, (f, h, w) = _features(params, y, m)
    out = params.net.forward(feats)
    return out.reshape(f, h, w, params.channels).transpose(3, 0, 1, 2)


def mask_loss_and_grad(params: MaskEncoderParams, y: np.ndarray,
                       m: np.ndarray, h_gt: np.ndarray,
                       ssim_weight: float | None = None):
    """Loss |P(y,m) - h|_1(mean) + lambda (1 - SSIM), explicit gradients."""
    lam = params.ssim_weight if ssim_weight is None else ssim_weight
    feats, (f, h, w) = _features(params, y, m)
    out, cache = params.net.forward_cache(feats)
    pred = out.reshape(f, h, w, params.channels).transpose(3, 0, 1, 2)
    h_gt = np.asarray(h_gt, dtype=np.float64)
    diff = pred - h_gt
    l1 = float(np.mean(np.abs(diff)))
    dpred = np.sign(diff) / diff.size
    if lam != 0.0:
        s_val, s_grad = ssim_and_grad(pred, h_gt)
        loss = l1 + lam * (1.0 - s_val)
        dpred = dpred - lam * s_grad
    else:
        loss = l1
    dout = dpred.transpose(1, 2, 3, 0).reshape(f * h * w, params.channels)
    grads, _ = params.net.backward(cache, dout)
    return loss, grads


def default_mask_training_config(epochs: int = 200, seed: int = 0) -> TrainingConfig:
    """Reference schedule: AdamW, lr 1e-4, weight decay 3e-2."""
    return TrainingConfig(epochs=epochs, batch_size=1, lr=1e-4,
                          weight_decay=3e-2, seed=seed)


def train_mask_encoder(pairs, config: TrainingConfig,
                       rt: int, rs: int, channels: int,
                       hidden: int = 128,
                       ssim_weight: float = DEFAULT_SSIM_WEIGHT) -> MaskEncoderParams:
    """Train the mask encoder on (y, m, h_gt) triples with AdamW."""
    if not pairs:
        raise MaskError("no training pairs")
    params = make_mask_encoder(rt, rs, channels, hidden=hidden,
                               seed=config.seed, ssim_weight=ssim_weight)
    opt = AdamW(params.net.params, lr=config.lr,
                weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    params.loss_history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for idx in order:
            y, m, h_gt = pairs[idx]
            loss, grads = mask_loss_and_grad(params, y, m, h_gt)
            if not np.isfinite(loss):
                raise MaskError("mask encoder training diverged")
            params.net.set_params(opt.step(params.net.params, grads))
            total += loss
        params.loss_history.append(total / len(pairs))
        params.epochs += 1
    return params


# -- checkpoints ------------------------------------------------------------

def save_mask_encoder(params: MaskEncoderParams, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    checksums = {}
    for i, (wt, b) in enumerate(zip(params.net.weights, params.net.biases)):
        for name, arr in ((f"w{i}", wt), (f"b{i}", b)):
            path = os.path.join(out_dir, f"{name}.bt")
            tensorio.write_tensor(path, arr)
            checksums[name] = tensorio.sha256_file(path)
    manifest = {
        "C": params.channels, "rt": params.rt, "rs": params.rs,
        "lambda": params.ssim_weight, "seed": params.seed,
        "epochs": params.epochs, "hidden": params.net.sizes[1],
        "checksum": checksums,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_mask_encoder(path: str) -> MaskEncoderParams:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    params = make_mask_encoder(manifest["rt"], manifest["rs"], manifest["C"],
                               hidden=manifest["hidden"],
                               seed=manifest["seed"],
                               ssim_weight=manifest["lambda"])
    params.epochs = manifest["epochs"]
    for i in range(len(params.net.weights)):
        for name in (f"w{i}", f"b{i}"):
            fpath = os.path.join(path, f"{name}.bt")
            if tensorio.sha256_file(fpath) != manifest["checksum"][name]:
                raise MaskError(f"checksum mismatch for {fpath}")
        params.net.weights[i] = tensorio.read_tensor(
            os.path.join(path, f"w{i}.bt")).astype(np.float64)
        params.net.biases[i] = tensorio.read_tensor(
            os.path.join(path, f"b{i}.bt")).astype(np.float64)
    return params
