"""Evaluation metrics and report assembly.

Chamfer distance follows the summed squared-nearest-neighbor form.  That
raw value grows with cloud size, so tables report the per-point normalized
value scaled by 1e4 (and MMD by 1e3); the scaling lives only in the report
layer, never in the metric itself.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve
from scipy.spatial import cKDTree

PSNR_CAP = 99.0
CD_TABLE_SCALE = 1e4
MMD_TABLE_SCALE = 1e3


def _as_points(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
        raise ValueError(f"point set must be nonempty (N, 3), got {p.shape}")
    return p


def chamfer_terms(p, q):
    """Directional sums (sum-of-squared-NN p->q, q->p) via exact KD-tree lookup."""
    p, q = _as_points(p), _as_points(q)
    d_pq, _ = cKDTree(q).query(p, k=1)
    d_qp, _ = cKDTree(p).query(q, k=1)
    return float(np.sum(d_pq ** 2)), float(np.sum(d_qp ** 2))


def chamfer(p, q) -> float:
    """Symmetric sum of squared nearest-neighbor distances."""
    a, b = chamfer_terms(p, q)
    return a + b


def chamfer_brute(p, q) -> float:
    """O(n^2) oracle for chamfer; kept independent of the KD-tree path."""
    p, q = _as_points(p), _as_points(q)
    sq = ((p[:, None, :] - q[None, :, :]) ** 2).sum(axis=2)
    return float(sq.min(axis=1).sum() + sq.min(axis=0).sum())


def chamfer_normalized(p, q) -> float:
    """Per-point form: each directional sum divided by its cloud size."""
    a, b = chamfer_terms(p, q)
    return a / len(np.asarray(p)) + b / len(np.asarray(q))


def chamfer_table(p, q) -> float:
    """Report-layer convention: normalized chamfer scaled by 1e4."""
    return CD_TABLE_SCALE * chamfer_normalized(p, q)


def mmd(generated, reference, chamfer_fn=chamfer) -> float:
    """Mean over reference clouds of the chamfer to the closest generated cloud.

    chamfer_fn defaults to the summed form; the report layer passes the
    normalized form before applying its table scaling.
    """
    if not generated or not reference:
        raise ValueError("both cloud sets must be nonempty")
    total = 0.0
    for ref in reference:
        total += min(chamfer_fn(gen, ref) for gen in generated)
    return total / len(reference)


def mmd_brute(generated, reference) -> float:
    """Exhaustive double loop using the brute-force chamfer oracle."""
    if not generated or not reference:
        raise ValueError("both cloud sets must be nonempty")
    total = 0.0
    for ref in reference:
        total += min(chamfer_brute(gen, ref) for gen in generated)
    return total / len(reference)


def psnr(img, ref, cap: float = PSNR_CAP) -> float:
    """-10 log10(MSE) for peak value 1; identical inputs report the cap."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, -10.0 * math.log10(mse))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(img, ref, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a Gaussian window; RGB images average the
    per-channel scores.  Peak value is 1."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    if img.ndim == 3:
        return float(np.mean([ssim(img[..., c], ref[..., c], window_size, sigma, k1, k2)
                              for c in range(img.shape[2])]))

    kernel = _gaussian_kernel(window_size, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2

    def smooth(x):
        return convolve(x, kernel, mode="reflect")

    mu_x = smooth(img)
    mu_y = smooth(ref)
    var_x = smooth(img * img) - mu_x ** 2
    var_y = smooth(ref * ref) - mu_y ** 2
    cov = smooth(img * ref) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(score.mean())


@dataclass
class MetricReport:
    """Per-scene metric rows plus aggregates; MMD only for set-level runs."""

    rows: list = field(default_factory=list)  # dicts: scene, cd, psnr, ssim
    mmd_value: float | None = None

    def add_row(self, scene: str, cd: float | None = None,
                psnr_value: float | None = None, ssim_value: float | None = None):
        self.rows.append({"scene": scene, "cd": cd, "psnr": psnr_value,
                          "ssim": ssim_value})

    def aggregates(self) -> dict:
        out = {}
        for key in ("cd", "psnr", "ssim"):
            vals = [r[key] for r in self.rows if r.get(key) is not None]
            if vals:
                out[key] = {"mean": float(np.mean(vals)), "median": float(np.median(vals))}
        return out

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "aggregates": self.aggregates(),
                           "mmd": self.mmd_value}, indent=1)

    def write_json(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["scene", "cd", "psnr", "ssim"])
            writer.writeheader()
            writer.writerows(self.rows)

    def format_table(self) -> str:
        """Human-readable summary; CD is shown x 1e4 and MMD x 1e3 per the
        usual table conventions (display only)."""
        lines = [f"{'scene':<20} {'CD x1e4':>10} {'PSNR':>8} {'SSIM':>8}"]
        for r in self.rows:
            cd = "" if r["cd"] is None else f"{r['cd'] * CD_TABLE_SCALE:10.3f}"
            ps = "" if r["psnr"] is None else f"{r['psnr']:8.2f}"
            ss = "" if r["ssim"] is None else f"{r['ssim']:8.4f}"
            lines.append(f"{r['scene']:<20} {cd:>10} {ps:>8} {ss:>8}")
        agg = self.aggregates()
        if agg:
            parts = []
            if "cd" in agg:
                parts.append(f"CD x1e4 mean {agg['cd']['mean'] * CD_TABLE_SCALE:.3f}")
            if "psnr" in agg:
                parts.append(f"PSNR mean {agg['psnr']['mean']:.2f}")
            if "ssim" in agg:
                parts.append(f"SSIM mean {agg['ssim']['mean']:.4f}")
            lines.append("aggregate: " + ", ".join(parts))
        if self.mmd_value is not None:
            lines.append(f"MMD-CD x1e3: {self.mmd_value * MMD_TABLE_SCALE:.3f}")
        return "\n".join(lines)
