import numpy as np
import pytest

from intrinsics.config import SynthConfig
from intrinsics.errors import DimensionError
from intrinsics.imaging import generate_synthetic_collections
from intrinsics.metrics import (EQUAL, FIRST_DARKER, SECOND_DARKER, JudgmentSet,
                                dssim, lmse, score_predictions, si_mse,
                                synth_judgments, whdr)


def _rand(rng, h=12, w=12, c=3):
    return rng.uniform(0.0, 1.0, size=(h, w, c))


# ---------------------------------------------------------------------------
# scale-invariant MSE

def test_si_mse_scale_invariance():
    rng = np.random.default_rng(0)
    g = _rand(rng)
    assert si_mse(2.0 * g, g) == pytest.approx(0.0, abs=1e-12)
    assert si_mse(0.3 * g, g) == pytest.approx(0.0, abs=1e-12)


def test_si_mse_zero_prediction():
    rng = np.random.default_rng(1)
    g = _rand(rng)
    assert si_mse(np.zeros_like(g), g) == pytest.approx(np.mean(g ** 2))


def _si_mse_grid_oracle(pred, gt):
    p = pred.reshape(-1)
    g = gt.reshape(-1)
    alphas = np.arange(0.0, 10.0, 1e-4)
    # quadratic in alpha, evaluated exactly on the grid
    vals = (np.mean(p ** 2) * alphas ** 2 - 2 * alphas * np.mean(p * g)
            + np.mean(g ** 2))
    return vals.min()


def test_si_mse_matches_grid_scan_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        p = _rand(rng)
        g = _rand(rng)
        assert si_mse(p, g) == pytest.approx(_si_mse_grid_oracle(p, g), abs=1e-6)


def test_si_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        si_mse(np.zeros((4, 4, 1)), np.zeros((4, 4, 3)))


# ---------------------------------------------------------------------------
# local MSE

def test_lmse_identity_zero():
    rng = np.random.default_rng(3)
    g = _rand(rng, 24, 24)
    assert lmse(g, g) == pytest.approx(0.0, abs=1e-12)


def test_lmse_per_window_scale_invariance():
    rng = np.random.default_rng(4)
    g = _rand(rng, 20, 20)
    pred = 3.7 * g  # single window at default (auto-shrunk) size
    assert lmse(pred, g, window=20, stride=10) == pytest.approx(0.0, abs=1e-12)


def test_lmse_constant_zero_scores_one():
    rng = np.random.default_rng(5)
    g = _rand(rng, 24, 24)
    assert lmse(np.zeros_like(g), g) == pytest.approx(1.0)


def _lmse_window_loop_oracle(pred, gt, window, stride):
    h, w = pred.shape[:2]

    def starts(extent):
        s = list(range(0, extent - window + 1, stride))
        if s[-1] != extent - window:
            s.append(extent - window)
        return s

    nums, dens = [], []
    for y in starts(h):
        for x in starts(w):
            pw = pred[y:y + window, x:x + window].reshape(-1)
            gw = gt[y:y + window, x:x + window].reshape(-1)
            denom = pw @ pw
            alpha = (pw @ gw) / denom if denom > 0 else 0.0
            nums.append(np.mean((alpha * pw - gw) ** 2))
            dens.append(np.mean(gw ** 2))
    return np.mean(nums) / np.mean(dens)


def test_lmse_matches_window_loop_oracle():
    rng = np.random.default_rng(6)
    for _ in range(3):
        p = _rand(rng, 33, 27)
        g = _rand(rng, 33, 27)
        assert lmse(p, g, window=20, stride=10) == pytest.approx(
            _lmse_window_loop_oracle(p, g, 20, 10), abs=1e-6)


# ---------------------------------------------------------------------------
# DSSIM

def test_dssim_identity_zero():
    rng = np.random.default_rng(7)
    g = _rand(rng)
    assert dssim(g, g) == pytest.approx(0.0, abs=1e-12)


def test_dssim_range():
    rng = np.random.default_rng(8)
    for _ in range(5):
        assert 0.0 <= dssim(_rand(rng), _rand(rng)) <= 1.0


def _dssim_formula_oracle(pred, gt, window=8):
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w, chans = pred.shape
    per_channel = []
    for ch in range(chans):
        vals = []
        for y in range(h - window + 1):
            for x in range(w - window + 1):
                p = pred[y:y + window, x:x + window, ch].reshape(-1)
                g = gt[y:y + window, x:x + window, ch].reshape(-1)
                mp, mg = p.mean(), g.mean()
                vp = np.mean(p ** 2) - mp ** 2
                vg = np.mean(g ** 2) - mg ** 2
                cov = np.mean(p * g) - mp * mg
                vals.append(((2 * mp * mg + c1) * (2 * cov + c2))
                            / ((mp ** 2 + mg ** 2 + c1) * (vp + vg + c2)))
        per_channel.append(np.mean(vals))
    return (1.0 - np.mean(per_channel)) / 2.0


def test_dssim_matches_formula_oracle():
    rng = np.random.default_rng(9)
    for _ in range(3):
        p = _rand(rng, 12, 12)
        g = _rand(rng, 12, 12)
        assert dssim(p, g) == pytest.approx(_dssim_formula_oracle(p, g), abs=1e-6)


# ---------------------------------------------------------------------------
# WHDR

def test_whdr_self_consistency_zero():
    rng = np.random.default_rng(10)
    gt = _rand(rng, 8, 8)
    js = synth_judgments(gt, 100, delta=0.10, seed=0)
    assert whdr(gt, js) == 0.0


def test_whdr_flipped_labels_score_one():
    rng = np.random.default_rng(11)
    gt = _rand(rng, 8, 8)
    js = synth_judgments(gt, 200, delta=0.10, seed=1)
    flip = {FIRST_DARKER: SECOND_DARKER, SECOND_DARKER: FIRST_DARKER}
    flipped = [(i, j, flip[lbl], w) for (i, j, lbl, w) in js.judgments
               if lbl != EQUAL]
    assert flipped, "need some non-equal pairs"
    assert whdr(gt, JudgmentSet(flipped, js.delta)) == 1.0


def test_whdr_hand_computed_2x2():
    # pixel luminances: 0.2, 0.4, 0.4, 0.8 at flat indices 0..3
    img = np.zeros((2, 2, 3))
    img[0, 0] = 0.2
    img[0, 1] = 0.4
    img[1, 0] = 0.4
    img[1, 1] = 0.8
    js = JudgmentSet([
        (0, 1, FIRST_DARKER, 2.0),   # 0.2 vs 0.4 -> correct
        (1, 2, EQUAL, 1.0),          # 0.4 vs 0.4 -> correct
        (3, 0, SECOND_DARKER, 3.0),  # 0.8 vs 0.2 -> correct
        (0, 3, EQUAL, 4.0),          # actually first darker -> wrong
    ], delta=0.10)
    assert whdr(img, js) == pytest.approx(4.0 / 10.0)


def test_whdr_flip_to_correct_never_increases():
    rng = np.random.default_rng(12)
    gt = _rand(rng, 8, 8)
    pred = _rand(rng, 8, 8)
    js = synth_judgments(gt, 100, delta=0.10, seed=2)
    base = whdr(pred, js)
    lum = pred.mean(axis=2).reshape(-1) + 1e-6
    for k, (i, j, lbl, w) in enumerate(js.judgments):
        ratio = lum[i] / lum[j]
        if ratio > 1.1:
            pred_lbl = SECOND_DARKER
        elif ratio < 1 / 1.1:
            pred_lbl = FIRST_DARKER
        else:
            pred_lbl = EQUAL
        if pred_lbl != lbl:
            fixed = list(js.judgments)
            fixed[k] = (i, j, pred_lbl, w)
            assert whdr(pred, JudgmentSet(fixed, js.delta)) <= base
            break


def test_whdr_empty_set_raises():
    with pytest.raises(ValueError):
        whdr(np.ones((4, 4, 3)), JudgmentSet([], 0.1))


def test_synth_judgments_deterministic_and_unique():
    rng = np.random.default_rng(13)
    gt = _rand(rng, 8, 8)
    a = synth_judgments(gt, 150, seed=5)
    b = synth_judgments(gt, 150, seed=5)
    assert a.judgments == b.judgments
    pairs = [(i, j) for i, j, _, _ in a.judgments]
    assert len(set(pairs)) == len(pairs)


def test_synth_judgments_index_frequency():
    rng = np.random.default_rng(14)
    gt = _rand(rng, 8, 8)
    js = synth_judgments(gt, 1000, seed=6)
    counts = np.zeros(64, dtype=int)
    for i, j, _, _ in js.judgments:
        counts[i] += 1
        counts[j] += 1
    # 2000 draws over 64 pixels: expect ~31 each, loose uniformity bounds
    assert counts.min() > 5
    assert counts.max() < 90


# ---------------------------------------------------------------------------
# aggregated scoring and baselines

@pytest.fixture(scope="module")
def eval_triples():
    triples, _ = generate_synthetic_collections(
        SynthConfig(image_size=32, num_scenes=4, seed=99))
    return triples


def test_gt_as_prediction_scores_zero(eval_triples):
    preds = [(t.reflectance, t.shading) for t in eval_triples]
    row = score_predictions(preds, eval_triples, n_pairs=50)
    for k, v in row.items():
        assert v == pytest.approx(0.0, abs=1e-9), k


def test_constant_baselines_analytic(eval_triples):
    preds = [(np.full_like(t.reflectance, 0.5), np.full_like(t.shading, 0.5))
             for t in eval_triples]
    row = score_predictions(preds, eval_triples, n_pairs=50)
    # si_mse of any constant prediction equals the gt variance
    expected_r = np.mean([t.reflectance.var() for t in eval_triples])
    expected_s = np.mean([t.shading.var() for t in eval_triples])
    assert row["mse_r"] == pytest.approx(expected_r, rel=1e-9)
    assert row["mse_s"] == pytest.approx(expected_s, rel=1e-9)
    assert row["mse_avg"] == pytest.approx((expected_r + expected_s) / 2, rel=1e-9)


def test_score_determinism(eval_triples):
    preds = [(t.input, t.input.mean(axis=2, keepdims=True)) for t in eval_triples]
    a = score_predictions(preds, eval_triples, n_pairs=50, seed=3)
    b = score_predictions(preds, eval_triples, n_pairs=50, seed=3)
    assert a == b
