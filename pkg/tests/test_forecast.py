import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrocube import metrics
from hydrocube._training import TrainingError
from hydrocube.despeckle import ssim
from hydrocube.forecast import (
    FAMILIES,
    ForecastConfig,
    ForecastModelSpec,
    build_model,
    build_sequences,
    compare_families,
    evaluate_predictions,
    load_forecaster,
    parameter_count,
    persistence_baseline,
    predict_next,
    save_forecaster,
    train_forecaster,
    tsl,
    write_comparison_csv,
)
from hydrocube.synthgen import SceneParams, disk_masks


def test_tsl_three_frames(rng):
    f = rng.random((3, 2, 2))
    hand = (np.mean((f[1] - f[0]) ** 2) + np.mean((f[2] - f[1]) ** 2)) / 2
    assert tsl(f).item() == pytest.approx(hand, rel=1e-12)
    assert tsl(np.stack([np.zeros((2, 2)), np.ones((2, 2))])).item() == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tsl_zero_iff_identical(seed):
    f = np.random.default_rng(seed).random((4, 3, 3))
    assert tsl(f).item() > 0
    assert tsl(np.repeat(f[:1], 4, axis=0)).item() == 0


@pytest.mark.parametrize("family", FAMILIES)
def test_shape_contract(family):
    torch.manual_seed(0)
    model = build_model(ForecastModelSpec(family, hidden=4))
    x = torch.rand(2, 7, 64, 64)
    with torch.no_grad():
        y = model(x)
    assert y.shape == (2, 64, 64)
    assert (y >= 0).all() and (y <= 1).all()


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(1, 2), st.integers(2, 8), st.integers(4, 12))
def test_shape_contract_property(family, hidden, k, depth, history, size):
    spec = ForecastModelSpec(family, hidden=hidden, kernel_size=k, depth=depth, history=history)
    model = build_model(spec).eval()
    with torch.no_grad():
        y = model(torch.rand(1, history, size, size))
    assert y.shape == (1, size, size) and 0 <= y.min() and y.max() <= 1


def test_parameter_count_arithmetic():
    spec = ForecastModelSpec("TD-CNN", hidden=4, kernel_size=3, depth=1, history=7)
    enc = 1 * 4 * 9 + 4
    dec = (7 * 4) * 4 * 9 + 4 + 4 * 1 + 1
    assert parameter_count(build_model(spec)) == enc + dec
    lstm = ForecastModelSpec("ConvLSTM", hidden=4, kernel_size=3)
    cell = (1 + 4) * 16 * 9 + 16
    assert parameter_count(build_model(lstm)) == cell + 4 * 4 * 9 + 4 + 4 + 1
    with pytest.raises(ValueError):
        ForecastModelSpec("GRU")


def test_tdcnn_batch_order_invariant():
    torch.manual_seed(0)
    model = build_model(ForecastModelSpec("TD-CNN", hidden=4)).eval()
    x = torch.rand(4, 7, 12, 12)
    with torch.no_grad():
        a = model(x)
        b = model(x[[2, 0, 3, 1]])
    torch.testing.assert_close(b, a[[2, 0, 3, 1]])


def test_persistence():
    h = np.random.default_rng(0).random((7, 5, 5))
    np.testing.assert_array_equal(persistence_baseline(h), h[-1])
    const = np.ones((7, 4, 4))
    assert metrics.mse(persistence_baseline(const), const[0]) == 0
    with pytest.raises(ValueError):
        persistence_baseline(np.zeros((0, 3, 3)))


def test_persistence_mse_equals_mask_step():
    p = SceneParams(size=64, n_steps=20, r0=18, amplitude=6, cloud_prob=0)
    m = disk_masks(p).astype(np.float32)
    samples = build_sequences(m)
    pers = np.stack([persistence_baseline(s.history) for s in samples])
    tgt = np.stack([s.target for s in samples])
    # for binary masks the squared error is the symmetric difference between consecutive disks
    steps = [np.logical_xor(m[t], m[t - 1]).mean() for t in range(7, 20)]
    assert metrics.mse(pers, tgt) == pytest.approx(np.mean(steps), rel=1e-12)


def test_build_sequences():
    maps = np.arange(10 * 4).reshape(10, 2, 2).astype(np.float32)
    s = build_sequences(maps, dates=list(range(10)), location=(1, 2))
    assert len(s) == 3
    np.testing.assert_array_equal(s[0].history, maps[:7])
    np.testing.assert_array_equal(s[0].target, maps[7])
    assert s[-1].target_date == 9 and s[0].location == (1, 2)


def test_evaluate_predictions_single_source(rng):
    p, t = rng.random((2, 3, 8, 8))
    out = evaluate_predictions(p, t)
    assert out["mse"] == metrics.mse(p, t)
    assert out["psnr"] == metrics.psnr(p, t)
    assert out["ssim"] == pytest.approx(np.mean([ssim(a, b) for a, b in zip(p, t)]))


def _seasonal_samples(n_steps=14, seed=0):
    p = SceneParams(size=24, n_steps=n_steps, r0=7, amplitude=3, cloud_prob=0, seed=seed)
    return build_sequences(disk_masks(p).astype(np.float32), p.dates)


def test_train_deterministic_and_predict(tmp_path):
    s = _seasonal_samples()
    spec = ForecastModelSpec("TD-CNN", hidden=4)
    cfg = ForecastConfig(epochs=2)
    m1, h1 = train_forecaster(s, spec, cfg)
    m2, h2 = train_forecaster(s, spec, cfg)
    assert h1 == h2 and {"mse", "ssim", "psnr", "loss"} <= set(h1[0])
    y = predict_next(m1, s[0].history)
    assert y.shape == (24, 24)
    np.testing.assert_array_equal(y, predict_next(m1, s[0].history))
    with pytest.raises(ValueError):
        predict_next(m1, s[0].history[:6])
    save_forecaster(tmp_path / "f", m1, h1)
    np.testing.assert_array_equal(predict_next(load_forecaster(tmp_path / "f"), s[0].history), y)
    with pytest.raises(TrainingError):
        train_forecaster([], spec, cfg)


def test_convlstm_learns_constant_identity():
    m = np.zeros((12, 16, 16), np.float32)
    m[:, 4:12, 4:12] = 1
    s = build_sequences(m)
    model, hist = train_forecaster(s, ForecastModelSpec("ConvLSTM", hidden=8), ForecastConfig(epochs=40, learning_rate=2e-2))
    assert min(r["mse"] for r in hist) < 1e-3


def test_comparison_csv(tmp_path):
    s = _seasonal_samples()
    rows = compare_families(s[:5], s[5:], ForecastConfig(epochs=1), families=FAMILIES, hidden=2)
    assert [r["rank"] for r in rows] == [1, 2, 3, 4]
    assert {r["family"] for r in rows} == set(FAMILIES) | {"persistence"}
    assert all(a["mse"] <= b["mse"] for a, b in zip(rows, rows[1:]))
    write_comparison_csv(rows, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "family,mse,ssim,psnr,psnr_infinite,rank"
    assert len(lines) == 5


def test_comparison_csv_infinite_psnr(tmp_path):
    write_comparison_csv([{"family": "persistence", "mse": 0.0, "ssim": 1.0, "psnr": float("inf"), "rank": 1}], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "persistence,0,1,,True,1"
