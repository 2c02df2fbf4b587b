"""Generative priors over latents via rectified flow.

The path is the linear interpolation z_t = (1-t) x0 + t x1 with x1 pure
Gaussian noise at t=1 and data at t=0. Two velocity models: a trainable
MLP fit by conditional flow matching (target x1 - x0), and an analytic
diagonal-Gaussian prior whose conditional velocity is available in closed
form, used as an exact oracle.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .codec import TrainingConfig
from .nn import MLP, AdamW

TIME_EMBED_DIM = 16


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class FlowState:
    z: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise FlowError(f"time {self.t} outside [0,1]")
        if not np.all(np.isfinite(self.z)):
            raise FlowError("state has non-finite entries")


@dataclass
class GaussianAnalytic:
    """Diagonal-Gaussian prior N(mean, diag(var)) with closed-form velocity."""
    mean: np.ndarray
    var: np.ndarray

    kind = "gaussian_analytic"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if np.any(self.var <= 0):
            raise FlowError("variances must be positive")


@dataclass
class MlpVelocity:
    net: MLP
    dim: int
    epochs: int = 0
    final_loss: float | None = None
    loss_history: list[float] = field(default_factory=list)

    kind = "mlp"


def time_embedding(t: np.ndarray) -> np.ndarray:
    """Sinusoidal embedding of shape (..., TIME_EMBED_DIM)."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    freqs = 2.0 ** np.arange(TIME_EMBED_DIM // 2)
    ang = t * freqs * np.pi
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def make_mlp_velocity(dim: int, hidden: int = 512, seed: int = 0) -> MlpVelocity:
    rng = np.random.default_rng(seed)
    net = MLP([dim + TIME_EMBED_DIM, hidden, hidden, dim],
              ["softplus", "softplus", "linear"], rng)
    return MlpVelocity(net, dim)


def velocity(model, state: FlowState) -> np.ndarray:
    """Evaluate the velocity field at (z, t); deterministic."""
    z, t = np.asarray(state.z, dtype=np.float64), state.t
    if model.kind == "gaussian_analytic":
        mu, var = model.mean, model.var
        s = (1 - t) ** 2 * var + t ** 2
        centered = z - (1 - t) * mu
        e_x0 = mu + (1 - t) * var * centered / s
        e_x1 = t * centered / s
        return e_x1 - e_x0
    if model.kind == "mlp":
        flat = z.reshape(1, -1)
        if flat.shape[1] != model.dim:
            raise FlowError("state dimension does not match model")
        inp = np.concatenate([flat, time_embedding(np.array([t]))], axis=1)
        return model.net.forward(inp).reshape(z.shape)
    raise FlowError(f"unknown velocity model kind {model.kind!r}")


def tweedie(state: FlowState, v: np.ndarray):
    """Endpoint estimates along the linear path.

    z0_hat = z - v t, z1_hat = z + v (1-t); their re-interpolation at t
    recovers z exactly.
    """
    z, t = np.asarray(state.z, dtype=np.float64), state.t
    v = np.asarray(v, dtype=np.float64)
    return z - v * t, z + v * (1.0 - t)


def flow_loss_and_grad(model: MlpVelocity, x0: np.ndarray, x1: np.ndarray,
                       t: np.ndarray):
    """Conditional flow-matching loss on a fixed (x0, x1, t) batch.

    Loss = mean over the batch of ||(x1 - x0) - v_theta((1-t)x0 + t x1, t)||^2
    averaged per coordinate; gradients are explicit backprop.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    zt = (1 - t[:, None]) * x0 + t[:, None] * x1
    target = x1 - x0
    inp = np.concatenate([zt, time_embedding(t)], axis=1)
    pred, cache = model.net.forward_cache(inp)
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grads, _ = model.net.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


def train_flow(dataset: np.ndarray | list[np.ndarray], config: TrainingConfig,
               hidden: int = 512) -> MlpVelocity:
    """Fit the MLP velocity by rectified-flow conditional flow matching."""
    data = np.stack([np.asarray(d, dtype=np.float64).ravel()
                     for d in dataset])
    if data.size == 0:
        raise FlowError("empty training dataset")
    model = make_mlp_velocity(data.shape[1], hidden=hidden, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.net.params, lr=config.lr,
                weight_decay=config.weight_decay)
    last_loss = None
    for _ in range(config.epochs):
        order = rng.permutation(len(data))
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            x0 = data[order[start:start + config.batch_size]]
            x1 = rng.standard_normal(x0.shape)
            t = rng.uniform(0.0, 1.0, size=len(x0))
            loss, grads = flow_loss_and_grad(model, x0, x1, t)
            if not np.isfinite(loss):
                raise FlowError(
                    f"flow training diverged; last finite loss {last_loss}")
            model.net.set_params(opt.step(model.net.params, grads))
            last_loss = loss
            epoch_loss += loss
            batches += 1
        model.loss_history.append(epoch_loss / batches)
        model.epochs += 1
    model.final_loss = model.loss_history[-1] if model.loss_history else None
    return model


def sample_unconditional(model, shape, steps: int, seed: int) -> np.ndarray:
    """Integrate the flow from noise at t=1 to data at t=0.

    Each step computes the endpoint estimates and re-interpolates the state
    at the next time on the uniform grid; equivalent to an Euler update for
    this path. Deterministic given seed.
    """
    if steps < 1:
        raise FlowError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(shape)
    for k in range(steps):
        t = 1.0 - k / steps
        v = velocity(model, FlowState(z, t))
        z0_hat, z1_hat = tweedie(FlowState(z, t), v)
        t_next = 1.0 - (k + 1) / steps
        z = (1.0 - t_next) * z0_hat + t_next * z1_hat
    return z


# -- checkpoints ------------------------------------------------------------

def save_flow(model: MlpVelocity, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    checksums = {}
    for i, (w, b) in enumerate(zip(model.net.weights, model.net.biases)):
        for name, arr in ((f"w{i}", w), (f"b{i}", b)):
            path = os.path.join(out_dir, f"{name}.bt")
            tensorio.write_tensor(path, arr)
            checksums[name] = tensorio.sha256_file(path)
    manifest = {
        "kind": model.kind, "dim": model.dim,
        "layers": model.net.sizes, "epochs": model.epochs,
        "final_loss": model.final_loss, "checksum": checksums,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_flow(path: str) -> MlpVelocity:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    sizes = manifest["layers"]
    model = make_mlp_velocity(manifest["dim"], hidden=sizes[1])
    model.epochs = manifest["epochs"]
    model.final_loss = manifest["final_loss"]
    for i in range(len(model.net.weights)):
        for name in (f"w{i}", f"b{i}"):
            fpath = os.path.join(path, f"{name}.bt")
            if tensorio.sha256_file(fpath) != manifest["checksum"][name]:
                raise FlowError(f"checksum mismatch for {fpath}")
        model.net.weights[i] = tensorio.read_tensor(
            os.path.join(path, f"w{i}.bt")).astype(np.float64)
        model.net.biases[i] = tensorio.read_tensor(
            os.path.join(path, f"b{i}.bt")).astype(np.float64)
    return model
