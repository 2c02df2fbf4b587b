"""Run directories, evaluation reports and ablation figures.

A solver run is a directory of tensor files plus manifest.json; eval turns
it into report.json (schema 1). Ablation sweeps emit a CSV next to the
matplotlib figures rendered from it.
"""

from __future__ import annotations

import csv
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import tensorio
from .metrics import masked_psnr, ssim
from .solver import SolveResult, SolverConfig

SCHEMA_VERSION = 1

RUN_TENSORS = ("output", "latent", "h", "w", "y", "mask")


class ReportError(ValueError):
    pass


def write_run(out_dir: str, result: SolveResult, cfg: SolverConfig,
              y: np.ndarray, mask: np.ndarray, mask_source: str,
              solver_kind: str = "latent",
              checkpoints: dict | None = None) -> str:
    """Persist a solver run: tensors + manifest.json. Returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    arrays = {"output": result.video, "latent": result.latent,
              "h": result.h, "w": result.w, "y": y, "mask": mask}
    checksums = {}
    for name, arr in arrays.items():
        path = os.path.join(out_dir, f"{name}.bt")
        tensorio.write_tensor(path, arr)
        checksums[name] = tensorio.sha256_file(path)
    manifest = {
        "schema": SCHEMA_VERSION,
        "solver": solver_kind,
        "mask_source": mask_source,
        "config": {"alpha": cfg.alpha, "gamma": cfg.gamma,
                   "K": cfg.cg_iters, "steps": cfg.steps, "seed": cfg.seed,
                   "backend": cfg.backend},
        "checkpoints": checkpoints or {},
        "checksums": checksums,
        "step_times": result.step_times,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _timing_breakdown(step_times: list[dict]) -> dict:
    cons = [s for s in step_times if s["consistency"]]
    free = [s for s in step_times if not s["consistency"]]
    return {
        "total_ms": 1e3 * sum(s["total"] for s in step_times),
        "consistency_steps": len(cons),
        "consistency_ms": 1e3 * sum(s["total"] for s in cons),
        "codec_ms": 1e3 * sum(s["codec"] for s in step_times),
        "prior_only_ms": 1e3 * sum(s["total"] for s in free),
        "per_consistency_step_ms":
            (1e3 * sum(s["total"] for s in cons) / len(cons)) if cons else 0.0,
    }


def eval_report(run_dir: str) -> dict:
    """Compute metrics for a run directory and write report.json; idempotent."""
    missing = [f for f in
               [f"{n}.bt" for n in RUN_TENSORS] + ["manifest.json"]
               if not os.path.exists(os.path.join(run_dir, f))]
    if missing:
        raise ReportError(f"missing artifacts in {run_dir}: {missing}")
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    arrays = {n: tensorio.read_tensor(
        os.path.join(run_dir, f"{n}.bt")).astype(np.float64)
        for n in RUN_TENSORS}
    out, y, mask = arrays["output"], arrays["y"], arrays["mask"]
    psnr_val = masked_psnr(out, y, mask)
    exact = math.isinf(psnr_val)
    report = {
        "schema": SCHEMA_VERSION,
        "measurement_psnr": None if exact else psnr_val,
        "exact_match": exact,
        "ssim": ssim(out * mask[..., None], y),
        "mask_mean": float(arrays["h"].mean()),
        "timing": _timing_breakdown(manifest["step_times"]),
        "config": manifest["config"],
        "mask_source": manifest["mask_source"],
        "solver": manifest["solver"],
    }
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


# -- delimited output + figures --------------------------------------------

def write_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        raise ReportError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def plot_alpha_sweep(rows: list[dict], path: str) -> None:
    alphas = [r["alpha"] for r in rows]
    psnrs = [r["measurement_psnr"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(alphas, psnrs, "o-", color="tab:blue")
    ax.set_xlabel(r"consistency window $\alpha$")
    ax.set_ylabel("measurement PSNR (dB)")
    ax.set_title("Measurement consistency vs. guidance window")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_mask_ablation(rows: list[dict], path: str) -> None:
    labels = [r["mask_source"] for r in rows]
    psnrs = [r["reconstruction_psnr"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(labels, psnrs, color=["tab:blue", "tab:orange", "tab:green"][:len(rows)])
    ax.set_ylabel("masked-region reconstruction PSNR (dB)")
    ax.set_title("Latent mask strategies")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_step_timing(rows: list[dict], path: str) -> None:
    labels = [r["solver"] for r in rows]
    per_step = [r["per_consistency_step_ms"] for r in rows]
    codec = [r["codec_ms_per_step"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    x = np.arange(len(rows))
    ax.bar(x, per_step, width=0.5, label="per consistency step")
    ax.bar(x, codec, width=0.5, label="codec share", color="tab:red")
    ax.set_xticks(x, labels)
    ax.set_ylabel("ms")
    ax.set_title("Pixel vs. latent data consistency cost")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
