"""Evaluation metrics: scale-invariant MSE, local MSE, DSSIM, WHDR, plus the
constant-prediction baselines and the report writers.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .networks import decompose

LUM_EPS = 1e-6

EQUAL = "equal"
FIRST_DARKER = "first_darker"
SECOND_DARKER = "second_darker"


def si_mse(pred: np.ndarray, gt: np.ndarray) -> float:
    """min over alpha of mean((alpha*pred - gt)^2); alpha closed-form."""
    if pred.shape != gt.shape:
        raise DimensionError(f"si_mse: shape mismatch {pred.shape} vs {gt.shape}")
    p = pred.reshape(-1).astype(np.float64)
    g = gt.reshape(-1).astype(np.float64)
    denom = p @ p
    alpha = (p @ g) / denom if denom > 0 else 0.0
    return float(np.mean((alpha * p - g) ** 2))


def _window_starts(extent, window, stride):
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def lmse(pred: np.ndarray, gt: np.ndarray, window: int = 20, stride: int = 10) -> float:
    """Mean windowed si_mse, normalized so the all-zero prediction scores 1."""
    if pred.shape != gt.shape:
        raise DimensionError(f"lmse: shape mismatch {pred.shape} vs {gt.shape}")
    h, w = pred.shape[:2]
    if window > min(h, w):
        window = min(h, w)
        stride = max(window // 2, 1)
    num = 0.0
    den = 0.0
    count = 0
    for y in _window_starts(h, window, stride):
        for x in _window_starts(w, window, stride):
            pw = pred[y:y + window, x:x + window]
            gw = gt[y:y + window, x:x + window]
            num += si_mse(pw, gw)
            den += float(np.mean(gw.astype(np.float64) ** 2))
            count += 1
    return (num / count) / max(den / count, 1e-12)


SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def dssim(pred: np.ndarray, gt: np.ndarray, window: int = 8) -> float:
    """(1 - SSIM)/2 with uniform windows, channel-averaged."""
    if pred.shape != gt.shape:
        raise DimensionError(f"dssim: shape mismatch {pred.shape} vs {gt.shape}")
    h, w = pred.shape[:2]
    window = min(window, h, w)
    vals = []
    for ch in range(pred.shape[2]):
        p = sliding_window_view(pred[:, :, ch].astype(np.float64), (window, window))
        g = sliding_window_view(gt[:, :, ch].astype(np.float64), (window, window))
        mp = p.mean(axis=(2, 3))
        mg = g.mean(axis=(2, 3))
        vp = (p ** 2).mean(axis=(2, 3)) - mp ** 2
        vg = (g ** 2).mean(axis=(2, 3)) - mg ** 2
        cov = (p * g).mean(axis=(2, 3)) - mp * mg
        ssim = ((2 * mp * mg + SSIM_C1) * (2 * cov + SSIM_C2)
                / ((mp ** 2 + mg ** 2 + SSIM_C1) * (vp + vg + SSIM_C2)))
        vals.append(ssim.mean())
    return float((1.0 - np.mean(vals)) / 2.0)


@dataclass
class JudgmentSet:
    """Weighted pairwise relative-reflectance judgments over flat pixel
    indices, with the equality band parameter delta."""
    judgments: list = field(default_factory=list)  # (idx1, idx2, label, weight)
    delta: float = 0.10


def _relative_label(l1: float, l2: float, delta: float) -> str:
    ratio = l1 / l2
    if ratio > 1.0 + delta:
        return SECOND_DARKER
    if ratio < 1.0 / (1.0 + delta):
        return FIRST_DARKER
    return EQUAL


def _pixel_luminance(reflectance: np.ndarray) -> np.ndarray:
    return reflectance.mean(axis=2).reshape(-1) + LUM_EPS


def whdr(pred_reflectance: np.ndarray, judgments: JudgmentSet) -> float:
    """Weighted fraction of pairwise judgments the prediction disagrees with."""
    if not judgments.judgments:
        raise ValueError("empty judgment set")
    lum = _pixel_luminance(pred_reflectance)
    err = 0.0
    weight_sum = 0.0
    for idx1, idx2, label, weight in judgments.judgments:
        pred_label = _relative_label(lum[idx1], lum[idx2], judgments.delta)
        if pred_label != label:
            err += weight
        weight_sum += weight
    if weight_sum <= 0:
        raise ValueError("judgment weights sum to zero")
    return err / weight_sum


def synth_judgments(gt_reflectance: np.ndarray, n_pairs: int, delta: float = 0.10,
                    seed: int = 0) -> JudgmentSet:
    """Random distinct pixel pairs labeled from the ground-truth reflectance
    with the same luminance-ratio rule used for scoring."""
    rng = np.random.default_rng(seed)
    n_pixels = gt_reflectance.shape[0] * gt_reflectance.shape[1]
    lum = _pixel_luminance(gt_reflectance)
    seen = set()
    judgments = []
    while len(judgments) < n_pairs:
        i = int(rng.integers(n_pixels))
        j = int(rng.integers(n_pixels))
        if i == j or (i, j) in seen:
            continue
        seen.add((i, j))
        label = _relative_label(lum[i], lum[j], delta)
        weight = float(rng.uniform(0.1, 1.0))
        judgments.append((i, j, label, weight))
    return JudgmentSet(judgments, delta)


METRIC_COLUMNS = ("mse_r", "mse_s", "mse_avg", "lmse_r", "lmse_s", "lmse_avg",
                  "dssim_r", "dssim_s", "dssim_avg", "whdr")


def score_predictions(predictions, triples, n_pairs: int = 200, delta: float = 0.10,
                      seed: int = 0) -> dict:
    """Average metrics of (reflectance, shading) predictions against paired
    ground truth; WHDR uses synthetic judgments derived from the gt."""
    acc = {k: 0.0 for k in METRIC_COLUMNS}
    for i, ((r_hat, s_hat), t) in enumerate(zip(predictions, triples)):
        acc["mse_r"] += si_mse(r_hat, t.reflectance)
        acc["mse_s"] += si_mse(s_hat, t.shading)
        acc["lmse_r"] += lmse(r_hat, t.reflectance)
        acc["lmse_s"] += lmse(s_hat, t.shading)
        acc["dssim_r"] += dssim(r_hat, t.reflectance)
        acc["dssim_s"] += dssim(s_hat, t.shading)
        js = synth_judgments(t.reflectance, n_pairs, delta, seed=seed + i)
        acc["whdr"] += whdr(r_hat, js)
    n = len(triples)
    row = {k: v / n for k, v in acc.items()}
    for m in ("mse", "lmse", "dssim"):
        row[f"{m}_avg"] = (row[f"{m}_r"] + row[f"{m}_s"]) / 2.0
    return row


def _const_reflectance_pred(t):
    h, w, _ = t.input.shape
    return np.full((h, w, 3), 0.5), t.input.mean(axis=2, keepdims=True)


def _const_shading_pred(t):
    h, w, _ = t.input.shape
    return t.input.copy(), np.full((h, w, 1), 0.5)


def evaluate(bundle, eval_triples, n_pairs: int = 200, delta: float = 0.10,
             seed: int = 0, use_gt_as_prediction: bool = False) -> dict:
    """Metric report for the model and the constant-prediction baselines."""
    if use_gt_as_prediction:
        preds = [(t.reflectance, t.shading) for t in eval_triples]
    else:
        preds = [decompose(bundle, t.input) for t in eval_triples]
    rows = {
        "model": score_predictions(preds, eval_triples, n_pairs, delta, seed),
        "baseline_const_reflectance": score_predictions(
            [_const_reflectance_pred(t) for t in eval_triples], eval_triples,
            n_pairs, delta, seed),
        "baseline_const_shading": score_predictions(
            [_const_shading_pred(t) for t in eval_triples], eval_triples,
            n_pairs, delta, seed),
    }
    return {"num_images": len(eval_triples), "delta": delta,
            "judgment_pairs": n_pairs, "rows": rows}


def report_text(report: dict) -> str:
    header = f"{'method':<28}" + "".join(f"{c:>11}" for c in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, row in report["rows"].items():
        lines.append(f"{name:<28}" + "".join(f"{row[c]:>11.5f}" for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def write_report(report: dict, json_path, text_path):
    with open(json_path, "w") as fh:
        json.dump(report, fh, indent=1)
    with open(text_path, "w") as fh:
        fh.write(report_text(report))
