"""Binary tensor container (.bt) and frame export.

Container layout (all little-endian):
    magic   4 bytes  b"BTSR"
    version u16      currently 1
    rank    u8
    dims    rank * u32
    dtype   u8       1 = float32
    payload product(dims) * 4 bytes, row-major float32
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

MAGIC = b"BTSR"
VERSION = 1
DTYPE_F32 = 1


class ContainerError(ValueError):
    """Raised on malformed or unsupported container data."""


def write_tensor(path: str | os.PathLike, arr: np.ndarray) -> None:
    """Write an array as a v1 float32 container. Values are f32-quantized."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    header = MAGIC + struct.pack("<HB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<B", DTYPE_F32)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"bad magic in {path}")
    (version, rank) = struct.unpack_from("<HB", data, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    off = 7
    dims = struct.unpack_from(f"<{rank}I", data, off)
    off += 4 * rank
    (dtype,) = struct.unpack_from("<B", data, off)
    off += 1
    if dtype != DTYPE_F32:
        raise ContainerError(f"unsupported dtype code {dtype}")
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = data[off:]
    if len(payload) != 4 * n:
        raise ContainerError(
            f"payload length {len(payload)} != expected {4 * n} in {path}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def sha256_file(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def export_frames(video: np.ndarray, out_dir: str | os.PathLike,
                  fmt: str = "ppm") -> list[str]:
    """Export a (F, H, W, 3) video in [0,1] as one image per frame.

    PPM (P6, 8-bit) is the bit-exact path; PNG goes through Pillow.
    Returns the written file paths, zero-padded index names.
    """
    if fmt not in ("ppm", "png"):
        raise ValueError(f"unsupported format: {fmt}")
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[-1] != 3:
        raise ValueError("expected video of shape (F, H, W, 3)")
    os.makedirs(out_dir, exist_ok=True)
    quant = np.clip(np.rint(video * 255.0), 0, 255).astype(np.uint8)
    paths = []
    for i, frame in enumerate(quant):
        path = os.path.join(str(out_dir), f"{i:03d}.{fmt}")
        if fmt == "ppm":
            h, w, _ = frame.shape
            with open(path, "wb") as fh:
                fh.write(f"P6\n{w} {h}\n255\n".encode())
                fh.write(frame.tobytes())
        else:
            from PIL import Image

            Image.fromarray(frame).save(path)
        paths.append(path)
    return paths


def import_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary P6 PPM back to a float frame in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ContainerError(f"not a P6 PPM: {path}")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    frame = np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8)
    return frame.reshape(h, w, 3).astype(np.float64) / maxval
