"""Alternating adversarial training of the model bundle on unpaired
collections, with deterministic seeding and bit-exact checkpoint resume.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import FullConfig
from .errors import CheckpointError, ConfigError, TrainingAbort
from .imaging import UnpairedCollections, UnpairedSampler
from .losses import (content_consistency_loss, image_recon_loss, kld_loss,
                     lsgan_d_loss, lsgan_g_loss, physical_loss,
                     prior_recon_loss, reflectance_smoothness_loss,
                     total_generator_objective)
from .networks import ModelBundle, batch_to_tensor, load_bundle, save_bundle

TRAINER_STATE_FILE = "trainer_state.pt"


@dataclass
class TrainState:
    bundle: ModelBundle
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    sampler: UnpairedSampler
    config: FullConfig
    step: int = 0
    history: list = field(default_factory=list)


def _generator_terms(bundle, t_i, t_r, t_s, weights, include_smoothness):
    """All generator-side objective terms, with live autograd graph."""
    # decomposition path: shared content, mapped priors
    c = bundle.encode_content("I", t_i)
    z_i = bundle.encode_prior("I", t_i)
    z_r_hat, z_s_hat = bundle.map_priors(z_i)
    r_fake = bundle.generate("R", c, z_r_hat)
    s_fake = bundle.generate("S", c, z_s_hat)

    # content consistency: re-encode the decompositions
    c_r = bundle.encode_content("R", r_fake)
    c_s = bundle.encode_content("S", s_fake)
    term_content = content_consistency_loss(c, c_r, c_s)

    # prior alignment against codes of real reflectance/shading samples
    z_r_real = bundle.encode_prior("R", t_r)
    z_s_real = bundle.encode_prior("S", t_s)
    term_kl = kld_loss(z_r_hat, z_r_real) + kld_loss(z_s_hat, z_s_real)

    # per-domain auto-encoder reconstructions
    i_rec = bundle.generate("I", c, z_i)
    c_rr = bundle.encode_content("R", t_r)
    r_rec = bundle.generate("R", c_rr, z_r_real)
    c_ss = bundle.encode_content("S", t_s)
    s_rec = bundle.generate("S", c_ss, z_s_real)
    term_img = (image_recon_loss(t_i, i_rec) + image_recon_loss(t_r, r_rec)
                + image_recon_loss(t_s, s_rec))

    # prior codes survive a decode/encode round trip
    term_pri = (prior_recon_loss(z_i, bundle.encode_prior("I", i_rec))
                + prior_recon_loss(z_r_real, bundle.encode_prior("R", r_rec))
                + prior_recon_loss(z_s_real, bundle.encode_prior("S", s_rec)))

    term_adv = (lsgan_g_loss(bundle.discriminate("R", r_fake))
                + lsgan_g_loss(bundle.discriminate("S", s_fake)))
    term_phy = physical_loss(t_i, r_fake, s_fake)

    parts = {"adversarial": term_adv, "content": term_content, "kl": term_kl,
             "image_recon": term_img, "prior_recon": term_pri, "physical": term_phy}
    if include_smoothness:
        parts["smoothness"] = reflectance_smoothness_loss(
            r_fake, t_i, weights.smoothness_sigma)
    return parts, (r_fake, s_fake)


def _fakes_only(bundle, t_i):
    with torch.no_grad():
        c = bundle.encode_content("I", t_i)
        z_i = bundle.encode_prior("I", t_i)
        z_r_hat, z_s_hat = bundle.map_priors(z_i)
        return bundle.generate("R", c, z_r_hat), bundle.generate("S", c, z_s_hat)


def _d_loss(bundle, t_r, t_s, r_fake, s_fake):
    return (lsgan_d_loss(bundle.discriminate("R", t_r),
                         bundle.discriminate("R", r_fake))
            + lsgan_d_loss(bundle.discriminate("S", t_s),
                           bundle.discriminate("S", s_fake)))


def forward_pass(bundle, batch_i, batch_r, batch_s, weights=None,
                 include_smoothness=False) -> dict:
    """All objective term values on one batch triple; no parameter updates."""
    if weights is None:
        weights = FullConfig().weights
    t_i, t_r, t_s = (batch_to_tensor(b) for b in (batch_i, batch_r, batch_s))
    with torch.no_grad():
        parts, (r_fake, s_fake) = _generator_terms(
            bundle, t_i, t_r, t_s, weights, include_smoothness)
        d_loss = _d_loss(bundle, t_r, t_s, r_fake, s_fake)
        values = {name: float(v) for name, v in parts.items()}
        values["d_adversarial"] = float(d_loss)
        values["total"] = float(total_generator_objective(parts, weights))
    for name, v in values.items():
        if not np.isfinite(v):
            raise TrainingAbort(f"non-finite value in forward pass: {name}")
    return values


def _check_grads_finite(params, phase):
    for p in params:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingAbort(f"non-finite gradient in {phase} update")


def discriminator_step(state: TrainState, tensors):
    """Update D_R/D_S on real batches vs detached fakes; generators untouched."""
    t_i, t_r, t_s = tensors
    r_fake, s_fake = _fakes_only(state.bundle, t_i)
    d_loss = _d_loss(state.bundle, t_r, t_s, r_fake, s_fake)
    if not torch.isfinite(d_loss):
        raise TrainingAbort("non-finite discriminator loss")
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    _check_grads_finite(state.bundle.discriminator_parameters(), "discriminator")
    state.opt_d.step()
    return d_loss


def generator_step(state: TrainState, tensors):
    """Update encoders, generators and the mapping MLP on the full objective."""
    t_i, t_r, t_s = tensors
    weights = state.config.weights
    parts, _ = _generator_terms(state.bundle, t_i, t_r, t_s, weights,
                                weights.smoothness > 0.0)
    total = total_generator_objective(parts, weights)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    _check_grads_finite(state.bundle.generator_parameters(), "generator")
    state.opt_g.step()
    return parts, total


def train_step(state: TrainState, batches) -> dict:
    """One discriminator update on detached fakes, then one generator/encoder/
    mapping update on the full weighted objective."""
    tensors = tuple(batch_to_tensor(b) for b in batches)
    d_loss = discriminator_step(state, tensors)
    parts, total = generator_step(state, tensors)

    record = {"step": state.step, "total": float(total.detach()),
              "d_adversarial": float(d_loss.detach())}
    record.update({name: float(v.detach()) for name, v in parts.items()})
    state.history.append(record)
    state.step += 1
    return record


def init_state(cfg: FullConfig, collections: UnpairedCollections) -> TrainState:
    cfg.validate()
    if cfg.train.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 (batch moments need 2 samples)")
    if cfg.train.mode == "iiw_smoothness" and cfg.weights.smoothness == 0.0:
        cfg.weights.smoothness = 1.0
    torch.manual_seed(cfg.train.seed)
    bundle = ModelBundle(cfg.net, seed=cfg.train.seed)
    sampler = UnpairedSampler(collections, cfg.train.batch_size,
                              np.random.default_rng([cfg.train.seed, 1]))
    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=cfg.train.lr,
                             betas=(cfg.train.beta1, cfg.train.beta2))
    opt_d = torch.optim.Adam(bundle.discriminator_parameters(), lr=cfg.train.lr,
                             betas=(cfg.train.beta1, cfg.train.beta2))
    return TrainState(bundle, opt_g, opt_d, sampler, cfg)


def save_checkpoint(state: TrainState, dir_path):
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    save_bundle(state.bundle, dir_path / "bundle")
    torch.save({"optimizer_g": state.opt_g.state_dict(),
                "optimizer_d": state.opt_d.state_dict(),
                "torch_rng": torch.get_rng_state(),
                "step": state.step}, dir_path / TRAINER_STATE_FILE)
    with open(dir_path / "sampler_state.json", "w") as fh:
        json.dump(state.sampler.get_state(), fh)
    with open(dir_path / "history.json", "w") as fh:
        json.dump(state.history, fh)
    with open(dir_path / "config.json", "w") as fh:
        json.dump(state.config.to_dict(), fh, indent=1)


def _config_from_dict(d: dict) -> FullConfig:
    cfg = FullConfig()
    for section in ("data", "net", "train", "weights"):
        target = getattr(cfg, section)
        for f in dataclasses.fields(target):
            if f.name in d[section]:
                val = d[section][f.name]
                if isinstance(getattr(target, f.name), tuple):
                    val = tuple(val)
                setattr(target, f.name, val)
    cfg.validate()
    return cfg


def load_checkpoint(dir_path, collections: UnpairedCollections = None) -> TrainState:
    """Restore a TrainState; pass the training collections to also restore the
    sampler (required to resume training)."""
    dir_path = Path(dir_path)
    bundle = load_bundle(dir_path / "bundle")
    try:
        extra = torch.load(dir_path / TRAINER_STATE_FILE, weights_only=False)
        with open(dir_path / "config.json") as fh:
            cfg = _config_from_dict(json.load(fh))
        with open(dir_path / "history.json") as fh:
            history = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"incomplete checkpoint {dir_path}: {exc}")
    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=cfg.train.lr,
                             betas=(cfg.train.beta1, cfg.train.beta2))
    opt_d = torch.optim.Adam(bundle.discriminator_parameters(), lr=cfg.train.lr,
                             betas=(cfg.train.beta1, cfg.train.beta2))
    opt_g.load_state_dict(extra["optimizer_g"])
    opt_d.load_state_dict(extra["optimizer_d"])
    torch.set_rng_state(extra["torch_rng"])
    sampler = None
    if collections is not None:
        sampler = UnpairedSampler(collections, cfg.train.batch_size,
                                  np.random.default_rng(0))
        with open(dir_path / "sampler_state.json") as fh:
            sampler.set_state(json.load(fh))
    return TrainState(bundle, opt_g, opt_d, sampler, cfg,
                      step=extra["step"], history=history)


def fit(cfg: FullConfig, collections: UnpairedCollections, out_dir=None,
        resume_from=None, step_callback=None) -> TrainState:
    """Run train_step to cfg.train.steps, checkpointing periodically."""
    if resume_from is not None:
        state = load_checkpoint(resume_from, collections)
        state.config.train.steps = cfg.train.steps
    else:
        state = init_state(cfg, collections)
    ckpt_every = state.config.train.checkpoint_every
    while state.step < state.config.train.steps:
        record = train_step(state, state.sampler.sample())
        if step_callback is not None:
            step_callback(record)
        if out_dir is not None and ckpt_every > 0 and state.step % ckpt_every == 0:
            save_checkpoint(state, Path(out_dir) / f"step_{state.step:06d}")
    if out_dir is not None:
        save_checkpoint(state, Path(out_dir) / "final")
    return state
