"""Data model, synthetic Lambertian scenes, dataset IO, unpaired sampling.

Images are numpy float arrays of shape (H, W, C) with values in [0, 1];
C=3 for natural images and reflectance, C=1 for shading. Shading is
achromatic and broadcast across color channels when composing.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .config import SynthConfig
from .errors import ConfigError, DimensionError, ImageIOError

LOSSLESS_EXTENSIONS = (".png",)

COMPOSE_TOL = 1e-6  # max abs residual of input vs reflectance*shading


def validate_image(img: np.ndarray, channels=None, name="image"):
    if img.ndim != 3:
        raise DimensionError(f"{name} must be (H, W, C), got shape {img.shape}")
    h, w, c = img.shape
    if channels is not None and c != channels:
        raise DimensionError(f"{name} must have {channels} channels, got {c}")
    if h < 8 or w < 8:
        raise DimensionError(f"{name} dims must be >= 8, got {h}x{w}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")


def compose_image(reflectance: np.ndarray, shading: np.ndarray) -> np.ndarray:
    """Pixel-wise product of reflectance and broadcast shading, clipped to [0,1]."""
    validate_image(reflectance, channels=3, name="reflectance")
    validate_image(shading, channels=1, name="shading")
    if reflectance.shape[:2] != shading.shape[:2]:
        raise DimensionError(
            f"spatial dims differ: {reflectance.shape[:2]} vs {shading.shape[:2]}")
    return np.clip(reflectance * shading, 0.0, 1.0)


@dataclass
class SceneTriple:
    input: np.ndarray       # (H, W, 3)
    reflectance: np.ndarray  # (H, W, 3)
    shading: np.ndarray     # (H, W, 1)

    def validate(self):
        validate_image(self.input, 3, "input")
        validate_image(self.reflectance, 3, "reflectance")
        validate_image(self.shading, 1, "shading")
        residual = np.abs(self.input - compose_image(self.reflectance, self.shading)).max()
        if residual > COMPOSE_TOL:
            raise ValueError(f"triple violates composition model, residual {residual:g}")


@dataclass
class UnpairedCollections:
    """Three independently gathered image lists; no pairing indices exist."""
    inputs: list
    reflectances: list
    shadings: list


def _piecewise_reflectance(size, cfg, rng):
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = rng.uniform(0.1, 0.9, size=3)
    n_regions = int(rng.integers(cfg.regions_min, cfg.regions_max + 1))
    # cap cell extent at size//3 so edge pixels stay a small fraction of the image
    max_dim = max(size // 3, 2)
    min_dim = max(size // 8, 1)
    for _ in range(n_regions):
        h = int(rng.integers(min_dim, max_dim + 1))
        w = int(rng.integers(min_dim, max_dim + 1))
        y = int(rng.integers(0, size - h + 1))
        x = int(rng.integers(0, size - w + 1))
        img[y:y + h, x:x + w] = rng.uniform(0.1, 0.9, size=3)
    return img


def _bilinear_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    f = grid.shape[0]
    xs = np.linspace(0.0, f - 1, size)
    rows = np.stack([np.interp(xs, np.arange(f), grid[i]) for i in range(f)])
    return np.stack([np.interp(xs, np.arange(f), rows[:, j]) for j in range(size)], axis=1)


def _smooth_shading(size, cfg, rng):
    lo, hi = cfg.shading_range
    grid = rng.uniform(0.0, 1.0, size=(cfg.shading_low_freq, cfg.shading_low_freq))
    up = _bilinear_upsample(grid, size)
    return (lo + (hi - lo) * up)[:, :, None]


def generate_scene(cfg: SynthConfig, scene_index: int) -> SceneTriple:
    """One synthetic triple; rng stream derived from (seed, scene_index)."""
    rng = np.random.default_rng([cfg.seed, scene_index])
    reflectance = _piecewise_reflectance(cfg.image_size, cfg, rng)
    shading = _smooth_shading(cfg.image_size, cfg, rng)
    return SceneTriple(compose_image(reflectance, shading), reflectance, shading)


def generate_synthetic_collections(cfg: SynthConfig):
    """All scene triples plus index-disjoint unpaired training collections.

    Inputs come from the first half of the scenes, reflectances and shadings
    from the second half, so training sees no paired ground truth.
    """
    cfg.validate()
    triples = [generate_scene(cfg, i) for i in range(cfg.num_scenes)]
    half = cfg.num_scenes // 2
    collections = UnpairedCollections(
        inputs=[t.input for t in triples[:half]],
        reflectances=[t.reflectance for t in triples[half:]],
        shadings=[t.shading for t in triples[half:]],
    )
    return triples, collections


# ---------------------------------------------------------------------------
# image IO: lossless 8- or 16-bit PNG, linear [0,1] <-> integer codes

def save_image(img: np.ndarray, path, bit_depth: int = 16):
    path = Path(path)
    if path.suffix.lower() not in LOSSLESS_EXTENSIONS:
        raise ImageIOError(f"refusing lossy/unknown container {path.name}; use PNG")
    if bit_depth == 8:
        maxv, dtype = 255, np.uint8
    elif bit_depth == 16:
        maxv, dtype = 65535, np.uint16
    else:
        raise ImageIOError(f"unsupported bit depth {bit_depth}")
    validate_image(img, name=str(path))
    coded = np.rint(img * maxv).astype(dtype)
    if coded.shape[2] == 1:
        coded = coded[:, :, 0]
    else:
        coded = cv2.cvtColor(coded, cv2.COLOR_RGB2BGR)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), coded):
        raise ImageIOError(f"failed to write {path}")


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in LOSSLESS_EXTENSIONS:
        raise ImageIOError(f"refusing lossy/unknown container {path.name}; use PNG")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot read image file {path}")
    if raw.dtype == np.uint8:
        maxv = 255.0
    elif raw.dtype == np.uint16:
        maxv = 65535.0
    else:
        raise ImageIOError(f"unsupported pixel type {raw.dtype} in {path}")
    img = raw.astype(np.float64) / maxv
    if img.ndim == 2:
        img = img[:, :, None]
    elif img.shape[2] == 3:
        img = cv2.cvtColor(img.astype(np.float32), cv2.COLOR_BGR2RGB).astype(np.float64)
    else:
        raise ImageIOError(f"unsupported channel count {img.shape[2]} in {path}")
    return img


def load_collection(dir_path) -> list:
    """All PNG images in a directory, sorted by name. Empty dir -> empty list."""
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise ImageIOError(f"not a directory: {dir_path}")
    images = []
    channels = None
    for p in sorted(dir_path.glob("*.png")):
        img = load_image(p)
        if channels is None:
            channels = img.shape[2]
        elif img.shape[2] != channels:
            raise ImageIOError(f"mixed channel counts in {dir_path}: {p.name}")
        images.append(img)
    return images


# Dataset root layout:
#   root/input/*.png  root/reflectance/*.png  root/shading/*.png (training, unpaired)
#   root/gt/scene_%05d_{i,r,s}.png            (paired triples, evaluation only)

def save_dataset(root, triples, collections: UnpairedCollections, bit_depth: int = 16):
    root = Path(root)
    for i, img in enumerate(collections.inputs):
        save_image(img, root / "input" / f"{i:05d}.png", bit_depth)
    for i, img in enumerate(collections.reflectances):
        save_image(img, root / "reflectance" / f"{i:05d}.png", bit_depth)
    for i, img in enumerate(collections.shadings):
        save_image(img, root / "shading" / f"{i:05d}.png", bit_depth)
    for i, t in enumerate(triples):
        save_image(t.input, root / "gt" / f"scene_{i:05d}_i.png", bit_depth)
        save_image(t.reflectance, root / "gt" / f"scene_{i:05d}_r.png", bit_depth)
        save_image(t.shading, root / "gt" / f"scene_{i:05d}_s.png", bit_depth)


def load_unpaired(root, max_samples: int = 0) -> UnpairedCollections:
    """Training-side loader; never touches root/gt."""
    root = Path(root)
    cols = UnpairedCollections(
        inputs=load_collection(root / "input"),
        reflectances=load_collection(root / "reflectance"),
        shadings=load_collection(root / "shading"),
    )
    if max_samples:
        cols.inputs = cols.inputs[:max_samples]
        cols.reflectances = cols.reflectances[:max_samples]
        cols.shadings = cols.shadings[:max_samples]
    return cols


def load_gt_triples(root) -> list:
    root = Path(root)
    gt = root / "gt"
    triples = []
    i = 0
    while (gt / f"scene_{i:05d}_i.png").exists():
        triples.append(SceneTriple(
            input=load_image(gt / f"scene_{i:05d}_i.png"),
            reflectance=load_image(gt / f"scene_{i:05d}_r.png"),
            shading=load_image(gt / f"scene_{i:05d}_s.png"),
        ))
        i += 1
    return triples


# ---------------------------------------------------------------------------
# unpaired batch sampling

class _Stream:
    def __init__(self, n, rng):
        self.n = n
        self.perm = rng.permutation(n)
        self.cursor = 0
        self.epoch = 0

    def next_index(self, rng):
        if self.cursor >= self.n:
            self.perm = rng.permutation(self.n)
            self.cursor = 0
            self.epoch += 1
        idx = int(self.perm[self.cursor])
        self.cursor += 1
        return idx

    def get_state(self):
        return {"n": self.n, "perm": self.perm.tolist(),
                "cursor": self.cursor, "epoch": self.epoch}

    def set_state(self, state):
        self.n = state["n"]
        self.perm = np.asarray(state["perm"], dtype=np.int64)
        self.cursor = state["cursor"]
        self.epoch = state["epoch"]


class UnpairedSampler:
    """Draws independently shuffled batches from the three collections.

    Each collection is shuffled before training and reshuffled per epoch;
    the three index streams never share state. The owned rng is the only
    mutable state besides the stream cursors.
    """

    def __init__(self, collections: UnpairedCollections, batch_size: int, rng):
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("inputs", "reflectances", "shadings"):
            if not getattr(collections, name):
                raise ConfigError(f"collection {name!r} is empty")
        self.collections = collections
        self.batch_size = batch_size
        self.rng = rng
        self.streams = [_Stream(len(collections.inputs), rng),
                        _Stream(len(collections.reflectances), rng),
                        _Stream(len(collections.shadings), rng)]

    def sample(self):
        """Returns (batch_I, batch_R, batch_S) as (B, H, W, C) float arrays."""
        lists = (self.collections.inputs, self.collections.reflectances,
                 self.collections.shadings)
        out = []
        for stream, images in zip(self.streams, lists):
            idxs = [stream.next_index(self.rng) for _ in range(self.batch_size)]
            out.append(np.stack([images[i] for i in idxs]))
        return tuple(out)

    def get_state(self):
        return {"rng": self.rng.bit_generator.state,
                "streams": [s.get_state() for s in self.streams]}

    def set_state(self, state):
        self.rng.bit_generator.state = state["rng"]
        for s, st in zip(self.streams, state["streams"]):
            s.set_state(st)


def sample_batch(collections: UnpairedCollections, batch_size: int, rng):
    """One-shot convenience wrapper around UnpairedSampler."""
    return UnpairedSampler(collections, batch_size, rng).sample()
