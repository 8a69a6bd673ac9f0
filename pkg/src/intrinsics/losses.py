"""Training objective terms. Every L1 term reduces by mean over elements so
loss magnitudes are resolution-independent and the published weights stay
meaningful at small image sizes.
"""

import torch

from .config import LossWeights
from .errors import DimensionError, TrainingAbort

LOG_EPS = 1e-6
VAR_FLOOR = 1e-6


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def content_consistency_loss(c, c_r, c_s):
    """mean|c_R - c| + mean|c_S - c| over the shared content codes."""
    _check_same_shape(c, c_r, "content_consistency")
    _check_same_shape(c, c_s, "content_consistency")
    return (c_r - c).abs().mean() + (c_s - c).abs().mean()


def gaussian_moments(codes):
    """Per-dimension mean and floor-guarded variance of a code batch."""
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise DimensionError("need a (B, d) batch with B >= 2 to fit moments")
    mean = codes.mean(dim=0)
    var = codes.var(dim=0, unbiased=False).clamp_min(VAR_FLOOR)
    return mean, var


def kld_loss(codes_pred, codes_real):
    """Closed-form KL between diagonal Gaussians fitted to the two batches,
    averaged over code dimensions."""
    mu_p, var_p = gaussian_moments(codes_pred)
    mu_q, var_q = gaussian_moments(codes_real)
    kl = 0.5 * ((mu_p - mu_q) ** 2 / var_q + var_p / var_q - 1.0 - torch.log(var_p / var_q))
    return kl.sum() / codes_pred.shape[1]


def image_recon_loss(x, x_rec):
    _check_same_shape(x, x_rec, "image_recon")
    return (x_rec - x).abs().mean()


def prior_recon_loss(z, z_rec):
    _check_same_shape(z, z_rec, "prior_recon")
    return (z_rec - z).abs().mean()


def lsgan_d_loss(scores_real, scores_fake):
    """Least-squares discriminator loss, targets 1 for real and 0 for fake,
    averaged over scales."""
    if not scores_real or len(scores_real) != len(scores_fake):
        raise DimensionError("score lists must be non-empty and of equal length")
    total = 0.0
    for s_real, s_fake in zip(scores_real, scores_fake):
        total = total + 0.5 * ((s_real - 1.0) ** 2).mean() + 0.5 * (s_fake ** 2).mean()
    return total / len(scores_real)


def lsgan_g_loss(scores_fake):
    """Least-squares generator loss, target 1 for fake, averaged over scales."""
    if not scores_fake:
        raise DimensionError("score list must be non-empty")
    total = 0.0
    for s_fake in scores_fake:
        total = total + 0.5 * ((s_fake - 1.0) ** 2).mean()
    return total / len(scores_fake)


def physical_loss(image, r_hat, s_hat):
    """mean|I - R_hat * S_hat| with single-channel shading broadcast."""
    if image.shape[-2:] != r_hat.shape[-2:] or image.shape[-2:] != s_hat.shape[-2:]:
        raise DimensionError("physical_loss: spatial dims differ")
    if image.shape != r_hat.shape:
        raise DimensionError("physical_loss: image/reflectance shapes differ")
    return (image - r_hat * s_hat).abs().mean()


def smoothness_features(image):
    """Per-pixel feature [pos_x, pos_y, intensity, chroma_1, chroma_2] from a
    (B, 3, H, W) image; positions normalized to [0, 1]."""
    b, c, h, w = image.shape
    if c != 3:
        raise DimensionError("smoothness features need a 3-channel image")
    ys = torch.arange(h, dtype=image.dtype) / max(h - 1, 1)
    xs = torch.arange(w, dtype=image.dtype) / max(w - 1, 1)
    py, px = torch.meshgrid(ys, xs, indexing="ij")
    intensity = image.mean(dim=1)
    csum = image.sum(dim=1) + LOG_EPS
    r1 = image[:, 0] / csum
    r2 = image[:, 1] / csum
    pos = torch.stack([px, py]).unsqueeze(0).expand(b, 2, h, w)
    return torch.cat([pos, intensity.unsqueeze(1), r1.unsqueeze(1), r2.unsqueeze(1)], dim=1)


_NEIGHBOR_SHIFTS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def reflectance_smoothness_loss(r_hat, image, sigma_diag=None):
    """Feature-weighted log-reflectance smoothness over 8-connected neighbors,
    normalized by pixel count. Invariant to global reflectance scaling."""
    if sigma_diag is None:
        sigma_diag = LossWeights().smoothness_sigma
    if r_hat.shape[-2:] != image.shape[-2:]:
        raise DimensionError("smoothness: spatial dims differ")
    b, _, h, w = r_hat.shape
    feats = smoothness_features(image)
    inv_sigma = torch.tensor(sigma_diag, dtype=r_hat.dtype).reciprocal().reshape(1, 5, 1, 1)
    log_r = torch.log(r_hat + LOG_EPS)
    total = 0.0
    for dy, dx in _NEIGHBOR_SHIFTS:
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ysn = slice(max(-dy, 0), h + min(-dy, 0))
        xsn = slice(max(-dx, 0), w + min(-dx, 0))
        df = feats[:, :, ys, xs] - feats[:, :, ysn, xsn]
        v = torch.exp(-0.5 * (df ** 2 * inv_sigma).sum(dim=1))
        dlog = (log_r[:, :, ys, xs] - log_r[:, :, ysn, xsn]).abs().mean(dim=1)
        total = total + (v * dlog).sum()
    return total / (b * h * w)


TERM_ORDER = ("adversarial", "content", "kl", "image_recon", "prior_recon",
              "physical", "smoothness")


def total_generator_objective(parts: dict, weights: LossWeights):
    """Weighted sum of the objective terms; aborts naming the first non-finite one."""
    coeffs = {"adversarial": 1.0, "content": weights.content, "kl": weights.kl,
              "image_recon": weights.image_recon, "prior_recon": weights.prior_recon,
              "physical": weights.physical, "smoothness": weights.smoothness}
    total = 0.0
    for name in TERM_ORDER:
        if name not in parts:
            if name == "smoothness" and coeffs[name] == 0.0:
                continue
            raise KeyError(f"missing objective term {name!r}")
        value = parts[name]
        finite = torch.isfinite(value) if torch.is_tensor(value) else torch.isfinite(torch.tensor(value))
        if not bool(finite):
            raise TrainingAbort(f"non-finite loss term {name!r}")
        total = total + coeffs[name] * value
    return total
