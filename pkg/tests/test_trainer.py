import json

import numpy as np
import pytest
import torch

from intrinsics.config import FullConfig, SynthConfig
from intrinsics.errors import CheckpointError, ConfigError, TrainingAbort
from intrinsics.imaging import generate_synthetic_collections
from intrinsics.losses import total_generator_objective
from intrinsics.networks import batch_to_tensor, decompose
from intrinsics.trainer import (_generator_terms, discriminator_step, fit,
                                forward_pass, generator_step, init_state,
                                load_checkpoint, save_checkpoint, train_step)


def _small_config(steps=3, seed=0):
    cfg = FullConfig()
    cfg.train.steps = steps
    cfg.train.batch_size = 2
    cfg.train.seed = seed
    cfg.train.checkpoint_every = 0
    return cfg


@pytest.fixture(scope="module")
def collections():
    _, cols = generate_synthetic_collections(
        SynthConfig(image_size=32, num_scenes=8, seed=5))
    return cols


def _param_snapshot(nets):
    return {name: [p.detach().clone() for p in net.parameters()]
            for name, net in nets.items()}


def _changed(nets, snapshot):
    out = {}
    for name, net in nets.items():
        deltas = [(p - q).abs().max().item()
                  for p, q in zip(net.parameters(), snapshot[name])]
        out[name] = max(deltas)
    return out


# ---------------------------------------------------------------------------
# forward pass

def test_forward_pass_terms_finite_nonnegative(collections):
    state = init_state(_small_config(), collections)
    batches = state.sampler.sample()
    vals = forward_pass(state.bundle, *batches)
    for name, v in vals.items():
        assert np.isfinite(v), name
        assert v >= 0.0, name


def test_forward_pass_prior_recon_positive_untrained(collections):
    state = init_state(_small_config(), collections)
    vals = forward_pass(state.bundle, *state.sampler.sample())
    assert vals["prior_recon"] > 0.0


def test_forward_pass_deterministic(collections):
    s1 = init_state(_small_config(seed=3), collections)
    s2 = init_state(_small_config(seed=3), collections)
    b1 = s1.sampler.sample()
    b2 = s2.sampler.sample()
    assert forward_pass(s1.bundle, *b1) == forward_pass(s2.bundle, *b2)


# ---------------------------------------------------------------------------
# train_step

def test_train_step_updates_every_generator_network(collections):
    state = init_state(_small_config(), collections)
    gen_nets = {n: net for n, net in state.bundle.networks().items()
                if not n.startswith("disc")}
    before = _param_snapshot(gen_nets)
    train_step(state, state.sampler.sample())
    deltas = _changed(gen_nets, before)
    for name, delta in deltas.items():
        assert delta > 0.0, f"{name} unchanged"


def test_discriminator_step_leaves_generators_untouched(collections):
    state = init_state(_small_config(), collections)
    gen_nets = {n: net for n, net in state.bundle.networks().items()
                if not n.startswith("disc")}
    disc_nets = {n: net for n, net in state.bundle.networks().items()
                 if n.startswith("disc")}
    before_g = _param_snapshot(gen_nets)
    before_d = _param_snapshot(disc_nets)
    tensors = tuple(batch_to_tensor(b) for b in state.sampler.sample())
    discriminator_step(state, tensors)
    assert all(v == 0.0 for v in _changed(gen_nets, before_g).values())
    assert all(v > 0.0 for v in _changed(disc_nets, before_d).values())


def test_generator_step_leaves_discriminators_untouched(collections):
    state = init_state(_small_config(), collections)
    disc_nets = {n: net for n, net in state.bundle.networks().items()
                 if n.startswith("disc")}
    before_d = _param_snapshot(disc_nets)
    tensors = tuple(batch_to_tensor(b) for b in state.sampler.sample())
    generator_step(state, tensors)
    assert all(v == 0.0 for v in _changed(disc_nets, before_d).values())


def test_history_one_record_per_step(collections):
    state = init_state(_small_config(steps=4), collections)
    for k in range(4):
        train_step(state, state.sampler.sample())
        assert len(state.history) == k + 1
        assert state.history[-1]["step"] == k


def test_nan_parameter_aborts(collections):
    state = init_state(_small_config(), collections)
    with torch.no_grad():
        next(state.bundle.gen_r.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingAbort):
        train_step(state, state.sampler.sample())


def test_batch_size_one_rejected(collections):
    cfg = _small_config()
    cfg.train.batch_size = 1
    with pytest.raises(ConfigError):
        init_state(cfg, collections)


# ---------------------------------------------------------------------------
# gradient isolation

def _grads_by_network(bundle, loss):
    for p in bundle.generator_parameters():
        p.grad = None
    loss.backward()
    out = {}
    for name, net in bundle.networks().items():
        if name.startswith("disc"):
            continue
        total = sum(p.grad.abs().sum().item()
                    for p in net.parameters() if p.grad is not None)
        out[name] = total
    return out


def test_physical_loss_reaches_both_generators(collections):
    state = init_state(_small_config(), collections)
    tensors = tuple(batch_to_tensor(b) for b in state.sampler.sample())
    parts, _ = _generator_terms(state.bundle, *tensors, state.config.weights, False)
    grads = _grads_by_network(state.bundle, parts["physical"])
    assert grads["gen_r"] > 0.0
    assert grads["gen_s"] > 0.0


def test_content_loss_reaches_all_content_paths(collections):
    state = init_state(_small_config(), collections)
    tensors = tuple(batch_to_tensor(b) for b in state.sampler.sample())
    parts, _ = _generator_terms(state.bundle, *tensors, state.config.weights, False)
    grads = _grads_by_network(state.bundle, parts["content"])
    for name in ("ec_i", "ec_r", "ec_s", "gen_r", "gen_s"):
        assert grads[name] > 0.0, name


# ---------------------------------------------------------------------------
# fit / checkpoints / determinism

def test_fit_history_length(collections):
    state = fit(_small_config(steps=5), collections)
    assert state.step == 5
    assert len(state.history) == 5


def test_equal_seeds_identical_histories(collections):
    h1 = fit(_small_config(steps=4, seed=11), collections).history
    h2 = fit(_small_config(steps=4, seed=11), collections).history
    assert h1 == h2


def test_different_seeds_differ(collections):
    h1 = fit(_small_config(steps=2, seed=1), collections).history
    h2 = fit(_small_config(steps=2, seed=2), collections).history
    assert h1 != h2


def test_checkpoint_round_trip_preserves_decompose(tmp_path, collections):
    state = fit(_small_config(steps=2), collections)
    save_checkpoint(state, tmp_path / "ckpt")
    back = load_checkpoint(tmp_path / "ckpt", collections)
    assert back.step == state.step
    assert back.history == state.history
    img = collections.inputs[0]
    r1, s1 = decompose(state.bundle, img)
    r2, s2 = decompose(back.bundle, img)
    assert np.array_equal(r1, r2)
    assert np.array_equal(s1, s2)


def test_resume_reproduces_trajectory_bitwise(tmp_path, collections):
    cfg = _small_config(steps=8, seed=21)
    cfg.train.checkpoint_every = 4
    full = fit(cfg, collections, out_dir=tmp_path / "run")
    cfg2 = _small_config(steps=8, seed=21)
    resumed = fit(cfg2, collections, resume_from=tmp_path / "run" / "step_000004")
    assert resumed.history == full.history
    for (n1, p1), (n2, p2) in zip(
            [(n, p) for name, net in full.bundle.networks().items()
             for n, p in net.named_parameters()],
            [(n, p) for name, net in resumed.bundle.networks().items()
             for n, p in net.named_parameters()]):
        assert torch.equal(p1, p2), n1


def test_load_checkpoint_missing_dir(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope")


def test_iiw_mode_enables_smoothness(collections):
    cfg = _small_config(steps=1)
    cfg.train.mode = "iiw_smoothness"
    state = init_state(cfg, collections)
    assert state.config.weights.smoothness == 1.0
    rec = train_step(state, state.sampler.sample())
    assert "smoothness" in rec


def test_total_objective_recomputed_from_history(collections):
    state = fit(_small_config(steps=2, seed=8), collections)
    w = state.config.weights
    for rec in state.history:
        expected = (rec["adversarial"] + w.content * rec["content"]
                    + w.kl * rec["kl"] + w.image_recon * rec["image_recon"]
                    + w.prior_recon * rec["prior_recon"]
                    + w.physical * rec["physical"])
        assert rec["total"] == pytest.approx(expected, rel=1e-5)
