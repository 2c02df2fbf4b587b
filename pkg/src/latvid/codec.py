"""Toy spatiotemporal video codecs.

Two stand-ins for a 3D VAE: an exactly linear patch-DCT codec whose
analysis basis is orthonormal (so encode/decode identities hold to machine
precision), and a small trainable patchwise MLP autoencoder that is
genuinely nonlinear. Both map (F, H, W, 3) videos in [0,1] to latents of
shape (C, F/rt, H/rs, W/rs).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .nn import MLP, AdamW


class CodecError(ValueError):
    pass


@dataclass
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid training config")


@dataclass
class CodecSpec:
    kind: str                   # "linear_dct" | "nonlinear_mlp"
    rt: int
    rs: int
    channels: int
    basis: np.ndarray | None = None       # (C, P) for linear_dct
    encoder: MLP | None = None            # patchwise nets for nonlinear_mlp
    decoder: MLP | None = None
    final_loss: float | None = None
    loss_history: list[float] = field(default_factory=list)

    @property
    def patch_dim(self) -> int:
        return self.rt * self.rs * self.rs * 3

    def latent_dims(self, frames: int, height: int, width: int):
        self.check_dims(frames, height, width)
        return (self.channels, frames // self.rt,
                height // self.rs, width // self.rs)

    def check_dims(self, frames: int, height: int, width: int) -> None:
        if frames % self.rt or height % self.rs or width % self.rs:
            raise CodecError(
                f"dims ({frames},{height},{width}) not divisible by "
                f"(rt={self.rt}, rs={self.rs})")


def _dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II rows: B[k, i]."""
    i = np.arange(n)
    basis = np.cos(np.pi * (2 * i[None, :] + 1) * i[:, None] / (2 * n))
    basis[0] *= np.sqrt(1.0 / n)
    basis[1:] *= np.sqrt(2.0 / n)
    return basis


def make_linear_codec(rt: int, rs: int, channels: int) -> CodecSpec:
    """Linear codec keeping the lowest-frequency 3D-DCT patch modes.

    Modes (kt, kh, kw) are ordered by total frequency and replicated once
    per color channel, giving an orthonormal (C, rt*rs*rs*3) analysis basis.
    """
    patch_dim = rt * rs * rs * 3
    if channels > patch_dim:
        raise CodecError(f"C={channels} exceeds patch dimensionality {patch_dim}")
    bt, bh, bw = _dct_basis(rt), _dct_basis(rs), _dct_basis(rs)
    modes = sorted(
        ((kt, kh, kw) for kt in range(rt) for kh in range(rs)
         for kw in range(rs)),
        key=lambda m: (sum(m), m))
    rows = []
    for kt, kh, kw in modes:
        mode = np.einsum("t,h,w->thw", bt[kt], bh[kh], bw[kw])
        for c in range(3):
            vec = np.zeros((rt, rs, rs, 3))
            vec[..., c] = mode
            rows.append(vec.ravel())
            if len(rows) == channels:
                break
        if len(rows) == channels:
            break
    return CodecSpec("linear_dct", rt, rs, channels,
                     basis=np.array(rows))


def make_mlp_codec(rt: int, rs: int, channels: int, hidden: int = 256,
                   seed: int = 0) -> CodecSpec:
    patch_dim = rt * rs * rs * 3
    if channels > patch_dim:
        raise CodecError(f"C={channels} exceeds patch dimensionality {patch_dim}")
    rng = np.random.default_rng(seed)
    enc = MLP([patch_dim, hidden, channels], ["tanh", "linear"], rng)
    dec = MLP([channels, hidden, patch_dim], ["tanh", "linear"], rng)
    return CodecSpec("nonlinear_mlp", rt, rs, channels,
                     encoder=enc, decoder=dec)


def _to_patches(spec: CodecSpec, video: np.ndarray) -> np.ndarray:
    video = np.asarray(video, dtype=np.float64)
    frames, height, width, _ = video.shape
    spec.check_dims(frames, height, width)
    f, h, w = frames // spec.rt, height // spec.rs, width // spec.rs
    patches = video.reshape(f, spec.rt, h, spec.rs, w, spec.rs, 3)
    return patches.transpose(0, 2, 4, 1, 3, 5, 6).reshape(f, h, w, -1)


def _from_patches(spec: CodecSpec, patches: np.ndarray) -> np.ndarray:
    f, h, w, _ = patches.shape
    video = patches.reshape(f, h, w, spec.rt, spec.rs, spec.rs, 3)
    video = video.transpose(0, 3, 1, 4, 2, 5, 6)
    return video.reshape(f * spec.rt, h * spec.rs, w * spec.rs, 3)


def encode(spec: CodecSpec, video: np.ndarray) -> np.ndarray:
    """Video (F, H, W, 3) -> latent (C, f, h, w)."""
    patches = _to_patches(spec, video)
    f, h, w, p = patches.shape
    flat = patches.reshape(-1, p)
    if spec.kind == "linear_dct":
        z = flat @ spec.basis.T
    elif spec.kind == "nonlinear_mlp":
        z = spec.encoder.forward(flat)
    else:
        raise CodecError(f"unknown codec kind {spec.kind!r}")
    return z.reshape(f, h, w, spec.channels).transpose(3, 0, 1, 2)


def decode(spec: CodecSpec, latent: np.ndarray) -> np.ndarray:
    """Latent (C, f, h, w) -> video (F, H, W, 3)."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[0] != spec.channels:
        raise CodecError("latent channel count does not match codec")
    c, f, h, w = latent.shape
    flat = latent.transpose(1, 2, 3, 0).reshape(-1, c)
    if spec.kind == "linear_dct":
        patches = flat @ spec.basis
    elif spec.kind == "nonlinear_mlp":
        patches = spec.decoder.forward(flat)
    else:
        raise CodecError(f"unknown codec kind {spec.kind!r}")
    return _from_patches(spec, patches.reshape(f, h, w, -1))


# -- nonlinear codec training ----------------------------------------------

def codec_loss_and_grad(spec: CodecSpec, patches: np.ndarray):
    """Mean-squared reconstruction loss and explicit parameter gradients.

    Returns (loss, grads) with grads ordered encoder params then decoder
    params, matching spec.encoder.params + spec.decoder.params.
    """
    z, enc_cache = spec.encoder.forward_cache(patches)
    recon, dec_cache = spec.decoder.forward_cache(z)
    diff = recon - patches
    loss = float(np.mean(diff ** 2))
    dout = 2.0 * diff / diff.size
    dec_grads, dz = spec.decoder.backward(dec_cache, dout)
    enc_grads, _ = spec.encoder.backward(enc_cache, dz)
    return loss, enc_grads + dec_grads


def train_codec(dataset: list[np.ndarray], config: TrainingConfig,
                rt: int = 2, rs: int = 4, channels: int = 12,
                hidden: int = 256) -> CodecSpec:
    """Train the patchwise MLP autoencoder by explicit gradient descent."""
    if not dataset:
        raise CodecError("empty training dataset")
    spec = make_mlp_codec(rt, rs, channels, hidden=hidden, seed=config.seed)
    all_patches = np.concatenate(
        [_to_patches(spec, v).reshape(-1, spec.patch_dim) for v in dataset])
    rng = np.random.default_rng(config.seed)
    opt = AdamW(spec.encoder.params + spec.decoder.params, lr=config.lr,
                weight_decay=config.weight_decay)
    n_enc = len(spec.encoder.params)
    for _ in range(config.epochs):
        order = rng.permutation(len(all_patches))
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = all_patches[order[start:start + config.batch_size]]
            loss, grads = codec_loss_and_grad(spec, batch)
            if not np.isfinite(loss):
                raise CodecError(
                    f"codec training diverged (non-finite loss at epoch "
                    f"{len(spec.loss_history)})")
            params = opt.step(spec.encoder.params + spec.decoder.params, grads)
            spec.encoder.set_params(params[:n_enc])
            spec.decoder.set_params(params[n_enc:])
            epoch_loss += loss
            batches += 1
        spec.loss_history.append(epoch_loss / batches)
    loss, _ = codec_loss_and_grad(spec, all_patches)
    spec.final_loss = loss
    return spec


# -- infill -----------------------------------------------------------------

_SHIFTS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right priority


def _infill_frame(frame: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Fill holes with the nearest known pixel, breadth-first over the
    4-neighborhood. Equidistant sources resolve by shift order."""
    out = frame.copy()
    filled = known.copy()
    while not filled.all():
        prev = filled.copy()
        progressed = False
        for dv, du in _SHIFTS:
            src = np.roll(prev, (dv, du), axis=(0, 1))
            if dv == -1:
                src[-1, :] = False
            elif dv == 1:
                src[0, :] = False
            if du == -1:
                src[:, -1] = False
            elif du == 1:
                src[:, 0] = False
            take = src & ~filled
            if np.any(take):
                out[take] = np.roll(out, (dv, du), axis=(0, 1))[take]
                filled |= take
                progressed = True
        if not progressed:
            break
    return out


def infill(video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Nearest-known-pixel infill per frame.

    A fully masked frame falls back to the per-frame mean of the nearest
    preceding frame that has known pixels, else mid-gray.
    """
    video = np.asarray(video, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if video.shape[:3] != mask.shape:
        raise CodecError("video and mask dims disagree")
    out = video.copy()
    last_mean = None
    for i in range(video.shape[0]):
        known = mask[i] > 0
        if not known.any():
            out[i] = 0.5 if last_mean is None else last_mean
            continue
        out[i] = _infill_frame(video[i], known)
        last_mean = out[i].mean(axis=(0, 1))
    return out


# -- checkpoints ------------------------------------------------------------

def save_codec(spec: CodecSpec, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    tensors = {}
    if spec.kind == "linear_dct":
        tensors["basis"] = spec.basis
    else:
        for tag, net in (("enc", spec.encoder), ("dec", spec.decoder)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                tensors[f"{tag}_w{i}"] = w
                tensors[f"{tag}_b{i}"] = b
    checksums = {}
    for name, arr in tensors.items():
        path = os.path.join(out_dir, f"{name}.bt")
        tensorio.write_tensor(path, arr)
        checksums[name] = tensorio.sha256_file(path)
    manifest = {
        "kind": spec.kind, "rt": spec.rt, "rs": spec.rs, "C": spec.channels,
        "checksum": checksums,
    }
    if spec.final_loss is not None:
        manifest["final_loss"] = spec.final_loss
    if spec.kind == "nonlinear_mlp":
        manifest["hidden"] = spec.encoder.sizes[1]
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_codec(path: str) -> CodecSpec:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    for name, digest in manifest["checksum"].items():
        fpath = os.path.join(path, f"{name}.bt")
        if tensorio.sha256_file(fpath) != digest:
            raise CodecError(f"checksum mismatch for {fpath}")
    if manifest["kind"] == "linear_dct":
        basis = tensorio.read_tensor(os.path.join(path, "basis.bt"))
        spec = make_linear_codec(manifest["rt"], manifest["rs"], manifest["C"])
        # stored basis is the f32-quantized one; trust the manifest dims
        spec.basis = basis.astype(np.float64)
        return spec
    spec = make_mlp_codec(manifest["rt"], manifest["rs"], manifest["C"],
                          hidden=manifest["hidden"])
    for tag, net in (("enc", spec.encoder), ("dec", spec.decoder)):
        for i in range(len(net.weights)):
            net.weights[i] = tensorio.read_tensor(
                os.path.join(path, f"{tag}_w{i}.bt")).astype(np.float64)
            net.biases[i] = tensorio.read_tensor(
                os.path.join(path, f"{tag}_b{i}.bt")).astype(np.float64)
    spec.final_loss = manifest.get("final_loss")
    return spec
