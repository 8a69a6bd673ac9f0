"""Learnable components: content/prior encoders, mapping MLP, AdaIN
generators, multi-scale LSGAN discriminators, and the bundle checkpoint.

All tensors are NCHW float32 during training; images enter as (H, W, C)
numpy arrays in [0, 1] and are converted at the boundary.
"""

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import NetConfig
from .errors import CheckpointError, DimensionError

CHECKPOINT_FORMAT_VERSION = 1

DOMAIN_CHANNELS = {"I": 3, "R": 3, "S": 1}

ADAIN_EPS = 1e-5


def instance_stats(m: torch.Tensor, eps: float = ADAIN_EPS):
    """Per-(sample, channel) spatial mean and epsilon-guarded std."""
    mu = m.mean(dim=(2, 3), keepdim=True)
    var = m.var(dim=(2, 3), keepdim=True, unbiased=False)
    return mu, torch.sqrt(var + eps)


def adain(m: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
          eps: float = ADAIN_EPS) -> torch.Tensor:
    """gamma * (m - mu(m)) / sigma(m) + beta, statistics per sample+channel."""
    if m.ndim != 4:
        raise DimensionError(f"adain expects (B, C, H, W), got {tuple(m.shape)}")
    mu, sigma = instance_stats(m, eps)
    gamma = gamma.reshape(-1, m.shape[1], 1, 1) if gamma.ndim > 1 else gamma.reshape(1, -1, 1, 1)
    beta = beta.reshape(-1, m.shape[1], 1, 1) if beta.ndim > 1 else beta.reshape(1, -1, 1, 1)
    return gamma * (m - mu) / sigma + beta


def _inorm(ch):
    return nn.InstanceNorm2d(ch, affine=True, track_running_stats=False)


class ResBlockIN(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm1 = _inorm(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = _inorm(ch)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return x + y


class ContentEncoder(nn.Module):
    """Strided convolutions (two stages, so output dims are input/4) plus
    residual blocks; instance normalization throughout."""

    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        layers = [nn.Conv2d(in_channels, cfg.base_channels, 7, padding=3),
                  _inorm(cfg.base_channels), nn.ReLU(inplace=True)]
        ch = cfg.base_channels
        for _ in range(cfg.n_down_content):
            layers += [nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1),
                       _inorm(ch * 2), nn.ReLU(inplace=True)]
            ch *= 2
        if ch != cfg.content_channels:
            layers += [nn.Conv2d(ch, cfg.content_channels, 3, padding=1),
                       _inorm(cfg.content_channels), nn.ReLU(inplace=True)]
            ch = cfg.content_channels
        layers += [ResBlockIN(ch) for _ in range(cfg.n_res_blocks)]
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise DimensionError(f"spatial dims must be divisible by 4, got {tuple(x.shape[2:])}")
        return self.net(x)


class PriorEncoder(nn.Module):
    """Strided downsampling, global average pooling, dense head."""

    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        layers = [nn.Conv2d(in_channels, cfg.base_channels, 7, padding=3),
                  _inorm(cfg.base_channels), nn.ReLU(inplace=True)]
        ch = cfg.base_channels
        for _ in range(cfg.n_down_prior):
            nxt = min(ch * 2, cfg.content_channels)
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1),
                       _inorm(nxt), nn.ReLU(inplace=True)]
            ch = nxt
        self.net = nn.Sequential(*layers)
        self.head = nn.Linear(ch, cfg.prior_dim)
        self.in_channels = in_channels

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        h = self.net(x)
        return self.head(h.mean(dim=(2, 3)))


class MappingMLP(nn.Module):
    """Splits a natural-image prior code into reflectance and shading codes."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.prior_dim = cfg.prior_dim
        self.net = nn.Sequential(
            nn.Linear(cfg.prior_dim, cfg.mlp_width), nn.ReLU(inplace=True),
            nn.Linear(cfg.mlp_width, cfg.mlp_width), nn.ReLU(inplace=True),
            nn.Linear(cfg.mlp_width, 2 * cfg.prior_dim))

    def forward(self, z):
        if z.shape[-1] != self.prior_dim:
            raise DimensionError(f"expected prior dim {self.prior_dim}, got {z.shape[-1]}")
        out = self.net(z)
        return out[..., :self.prior_dim], out[..., self.prior_dim:]


class ResBlockAdaIN(nn.Module):
    """Residual block whose two convs are each followed by AdaIN with
    externally supplied (gamma, beta)."""

    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x, params):
        (g1, b1), (g2, b2) = params
        y = F.relu(adain(self.conv1(x), g1, b1))
        y = adain(self.conv2(y), g2, b2)
        return x + y


class Generator(nn.Module):
    """AdaIN residual blocks conditioned on a prior code, then two
    nearest-neighbor upsample+conv stages; logistic output into (0, 1)."""

    def __init__(self, out_channels: int, cfg: NetConfig):
        super().__init__()
        ch = cfg.content_channels
        self.blocks = nn.ModuleList([ResBlockAdaIN(ch) for _ in range(cfg.n_res_blocks)])
        # one (gamma, beta) pair per conv, two convs per block
        self.n_adain = cfg.n_res_blocks * 2
        self.adain_ch = ch
        self.param_mlp = nn.Sequential(
            nn.Linear(cfg.prior_dim, cfg.mlp_width), nn.ReLU(inplace=True),
            nn.Linear(cfg.mlp_width, cfg.mlp_width), nn.ReLU(inplace=True),
            nn.Linear(cfg.mlp_width, self.n_adain * 2 * ch))
        up = []
        for _ in range(2):
            up += [nn.Upsample(scale_factor=2, mode="nearest"),
                   nn.Conv2d(ch, ch // 2, 5, padding=2),
                   _inorm(ch // 2), nn.ReLU(inplace=True)]
            ch //= 2
        self.up = nn.Sequential(*up)
        self.out_conv = nn.Conv2d(ch, out_channels, 7, padding=3)
        self.out_channels = out_channels

    def adain_params(self, prior):
        raw = self.param_mlp(prior).reshape(-1, self.n_adain, 2, self.adain_ch)
        # center gamma at 1 so a freshly initialized MLP passes signal through
        return [(1.0 + raw[:, k, 0], raw[:, k, 1]) for k in range(self.n_adain)]

    def forward(self, content, prior):
        if content.shape[1] != self.adain_ch:
            raise DimensionError(f"expected {self.adain_ch} content channels, got {content.shape[1]}")
        if content.shape[0] != prior.shape[0]:
            raise DimensionError("content/prior batch size mismatch")
        params = self.adain_params(prior)
        h = content
        for i, block in enumerate(self.blocks):
            h = block(h, params[2 * i:2 * i + 2])
        h = self.up(h)
        return torch.sigmoid(self.out_conv(h))


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        layers = []
        ch = in_channels
        nxt = cfg.base_channels
        for _ in range(cfg.disc_layers_per_scale):
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1),
                       nn.LeakyReLU(0.2, inplace=True)]
            ch, nxt = nxt, min(nxt * 2, cfg.content_channels * 4)
        layers += [nn.Conv2d(ch, 1, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """One patch discriminator per scale; scale k sees the input average-
    pooled k times by 2x2. Scores are unbounded LSGAN regression targets."""

    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        self.scales = nn.ModuleList(
            [PatchDiscriminator(in_channels, cfg) for _ in range(cfg.disc_scales)])
        self.in_channels = in_channels

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        scores = []
        for d in self.scales:
            scores.append(d(x))
            x = F.avg_pool2d(x, 2)
        return scores


def _init_params(module: nn.Module, gen: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


NETWORK_NAMES = ("ec_i", "ec_r", "ec_s", "ep_i", "ep_r", "ep_s",
                 "gen_i", "gen_r", "gen_s", "mapping", "disc_r", "disc_s")


class ModelBundle:
    """The full set of encoders, generators, mapping MLP and discriminators."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.ec_i = ContentEncoder(3, cfg)
        self.ec_r = ContentEncoder(3, cfg)
        self.ec_s = ContentEncoder(1, cfg)
        self.ep_i = PriorEncoder(3, cfg)
        self.ep_r = PriorEncoder(3, cfg)
        self.ep_s = PriorEncoder(1, cfg)
        self.gen_i = Generator(3, cfg)
        self.gen_r = Generator(3, cfg)
        self.gen_s = Generator(1, cfg)
        self.mapping = MappingMLP(cfg)
        self.disc_r = MultiScaleDiscriminator(3, cfg)
        self.disc_s = MultiScaleDiscriminator(1, cfg)
        gen = torch.Generator().manual_seed(seed)
        for name in NETWORK_NAMES:
            _init_params(getattr(self, name), gen)

    def networks(self):
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def _content_encoder(self, domain):
        return {"I": self.ec_i, "R": self.ec_r, "S": self.ec_s}[domain]

    def _prior_encoder(self, domain):
        return {"I": self.ep_i, "R": self.ep_r, "S": self.ep_s}[domain]

    def _generator(self, domain):
        return {"I": self.gen_i, "R": self.gen_r, "S": self.gen_s}[domain]

    def encode_content(self, domain, image):
        return self._content_encoder(domain)(image)

    def encode_prior(self, domain, image):
        return self._prior_encoder(domain)(image)

    def map_priors(self, z_i):
        return self.mapping(z_i)

    def generate(self, domain, content, prior):
        return self._generator(domain)(content, prior)

    def discriminate(self, domain, image):
        return {"R": self.disc_r, "S": self.disc_s}[domain](image)

    def generator_parameters(self):
        params = []
        for name in NETWORK_NAMES:
            if not name.startswith("disc"):
                params += list(getattr(self, name).parameters())
        return params

    def discriminator_parameters(self):
        return list(self.disc_r.parameters()) + list(self.disc_s.parameters())


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img)).float().permute(2, 0, 1).unsqueeze(0)


def batch_to_tensor(batch: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch)).float().permute(0, 3, 1, 2)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().squeeze(0).permute(1, 2, 0).cpu().numpy().astype(np.float64)


def decompose(bundle: ModelBundle, image: np.ndarray):
    """Split one natural image into (reflectance, shading) via the shared
    content code and the mapped prior codes."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"decompose expects (H, W, 3), got {image.shape}")
    x = image_to_tensor(image)
    with torch.no_grad():
        c = bundle.encode_content("I", x)
        z_i = bundle.encode_prior("I", x)
        z_r, z_s = bundle.map_priors(z_i)
        r_hat = bundle.generate("R", c, z_r)
        s_hat = bundle.generate("S", c, z_s)
    return tensor_to_image(r_hat), tensor_to_image(s_hat)


# ---------------------------------------------------------------------------
# bundle checkpoint: manifest.json + one little-endian float32 blob per network

def save_bundle(bundle: ModelBundle, dir_path):
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION,
                "net_config": dataclasses.asdict(bundle.cfg),
                "networks": {}}
    for name, net in bundle.networks().items():
        tensors = []
        offset = 0
        chunks = []
        for pname, p in net.named_parameters():
            arr = p.detach().cpu().numpy().astype("<f4")
            tensors.append({"name": pname, "shape": list(arr.shape),
                            "dtype": "float32", "offset": offset})
            offset += arr.size
            chunks.append(arr.reshape(-1))
        blob = np.concatenate(chunks) if chunks else np.empty(0, dtype="<f4")
        blob.tofile(dir_path / f"{name}.bin")
        manifest["networks"][name] = {"file": f"{name}.bin", "tensors": tensors}
    with open(dir_path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_bundle(dir_path) -> ModelBundle:
    dir_path = Path(dir_path)
    try:
        with open(dir_path / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {dir_path}: {exc}")
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    cfg = NetConfig(**manifest["net_config"])
    bundle = ModelBundle(cfg, seed=0)
    for name, net in bundle.networks().items():
        entry = manifest["networks"].get(name)
        if entry is None:
            raise CheckpointError(f"checkpoint missing network {name!r}")
        blob = np.fromfile(dir_path / entry["file"], dtype="<f4")
        params = dict(net.named_parameters())
        for spec in entry["tensors"]:
            p = params.get(spec["name"])
            if p is None:
                raise CheckpointError(f"unknown tensor {spec['name']!r} in {name}")
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            flat = blob[spec["offset"]:spec["offset"] + n]
            if flat.size != n:
                raise CheckpointError(f"truncated blob for {name}/{spec['name']}")
            with torch.no_grad():
                p.copy_(torch.from_numpy(flat.reshape(spec["shape"]).copy()))
    return bundle
