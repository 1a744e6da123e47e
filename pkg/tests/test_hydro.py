import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrocube import hydro
from hydrocube.hydro import DEMRaster, build_series, surface_area, trend, water_volume
from hydrocube.synthgen import SceneParams, analytic_truth, disk_masks, generate_scene

DATES = [dt.date(2020, 1, 1) + dt.timedelta(days=61 * k) for k in range(24)]


def test_area_cases():
    assert surface_area(np.zeros((4, 4))) == 0
    m = np.zeros((4, 4), np.uint8)
    m[0, :3] = 1
    assert surface_area(m) == 300.0
    with pytest.raises(ValueError):
        surface_area(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        surface_area(m, 0)


def test_volume_cases():
    m = np.zeros((4, 4), np.uint8)
    m[1, 1:4] = 1
    assert water_volume(m, DEMRaster(np.full((4, 4), 2.0))) == 600.0
    assert water_volume(np.zeros((4, 4)), DEMRaster(np.random.default_rng(0).random((4, 4)))) == 0.0
    with pytest.raises(ValueError):
        water_volume(m, DEMRaster(np.ones((3, 4))))
    with pytest.raises(ValueError):
        DEMRaster(-np.ones((2, 2)))


def test_disk_area_radius_20():
    p = SceneParams(size=64, n_steps=1, r0=20, amplitude=0)
    assert abs(surface_area(disk_masks(p)[0]) - math.pi * 200.0**2) <= 0.05 * math.pi * 200.0**2


@pytest.mark.parametrize("R", [20, 35, 60])
def test_paraboloid_disk_volume(R):
    p = SceneParams(size=2 * R + 9, n_steps=1, r0=R, amplitude=0)
    s = generate_scene(p)
    vol = water_volume(s.truth_masks[0], s.dem)
    closed = math.pi * p.depth * (R * 10.0) ** 2 / 2
    assert abs(vol - closed) <= 0.05 * closed
    assert vol == pytest.approx(analytic_truth(p, 0)[1], rel=0.05)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_additive_scaling(seed):
    rng = np.random.default_rng(seed)
    dem = DEMRaster(rng.integers(0, 50, (6, 6)).astype(float))
    a = rng.integers(0, 2, (6, 6))
    b = rng.integers(0, 2, (6, 6))
    union, inter = a | b, a & b
    # integer depths keep every sum exact
    assert water_volume(union, dem) + water_volume(inter, dem) == water_volume(a, dem) + water_volume(b, dem)
    assert water_volume(inter, dem) <= water_volume(a, dem) <= water_volume(union, dem)
    assert surface_area(inter) <= surface_area(a)
    assert water_volume(a, dem.scaled(2)) == 2 * water_volume(a, dem)


def test_series_cases():
    dem = DEMRaster(np.full((8, 8), 3.0))
    m = np.zeros((8, 8), np.uint8)
    m[2:5, 2:5] = 1
    s = build_series(DATES[:5], [m] * 5, dem)
    assert len(set(s.volumes)) == 1 and s.records[0].pixels == 9 and s.areas[0] == 900.0
    with pytest.raises(ValueError, match="duplicate"):
        build_series([DATES[0], DATES[0]], [m, m], dem)
    with pytest.raises(ValueError):
        build_series(DATES[:2], [m], dem)


def test_shrinking_series_strictly_decreasing():
    p = SceneParams(size=64, n_steps=10, r0=25, amplitude=0, trend=-1.5)
    s = generate_scene(p)
    series = build_series(p.dates, s.truth_masks, s.dem)
    assert (np.diff(series.volumes) < 0).all()


def test_seasonal_autocorrelation_peak():
    p = SceneParams(size=80, n_steps=36, r0=25, amplitude=8, period=6)
    vols = np.array([analytic_truth(p, t)[1] for t in range(p.n_steps)])
    x = vols - vols.mean()
    ac = [np.dot(x[:-k], x[k:]) / np.dot(x, x) for k in range(1, 10)]
    assert int(np.argmax(ac)) + 1 == 6


@pytest.mark.parametrize("b", [-250.0, 0.37, 1e4])
def test_trend_linear_slope(b):
    y = 1000.0 + b * np.arange(30)
    r = trend(y, 6)
    assert abs(r.slope - b) <= 0.01 * abs(b)
    np.testing.assert_allclose(r.trend, y, rtol=1e-12)


def test_trend_sinusoid_and_constant():
    t = np.arange(36)
    amp, period = 50.0, 6
    r = trend(amp * np.sin(2 * np.pi * t / period), period)
    assert abs(r.slope) < 0.01 * amp / period
    c = trend(np.full(24, 7.3), 6)
    assert c.slope == 0.0
    assert (c.seasonal == 0).all() and (c.residual == 0).all()
    with pytest.raises(ValueError):
        trend(np.ones(11), 6)


def test_trend_odd_period_components_sum():
    rng = np.random.default_rng(1)
    y = rng.random(25) + 0.1 * np.arange(25)
    r = trend(y, 5)
    np.testing.assert_allclose(r.trend + r.seasonal + r.residual, y, atol=1e-12)
    assert abs(r.seasonal[:5].sum()) < 1e-12


def test_validate_against_ground():
    s = hydro.HydroSeries("x", (hydro.HydroRecord(dt.date(2016, 4, 13), 445214, 0, 0),))
    rows = hydro.validate_against_ground(s, [(dt.date(2016, 4, 15), 512700)])
    assert rows[0].difference_m2 == 67486
    rows = hydro.validate_against_ground(s, [(dt.date(2016, 4, 13), 445214)])
    assert rows[0].difference_m2 == 0
    with pytest.raises(ValueError, match="within 7 days"):
        hydro.validate_against_ground(s, [(dt.date(2016, 5, 1), 1)])


def test_table_v_fixture():
    rows = hydro.load_table_v()
    assert len(rows) == 10
    assert rows[0].verbatim[0] == "512.700"
    val = hydro.table_v_validation()
    for g, v in zip(rows, val):
        assert v.difference_m2 == g.gt_area - g.measured_area
    assert val[0].difference_m2 == 67486
    # four printed differences are one unit below the subtraction
    off = [g.printed_difference - (g.gt_area - g.measured_area) for g in rows]
    assert sorted(set(off)) == [-1, 0] and off.count(-1) == 4


def test_table_v_csv_stable():
    a = hydro.validation_csv(hydro.table_v_validation())
    b = hydro.validation_csv(hydro.table_v_validation())
    assert a == b
    assert a.splitlines()[0] == "date,gt_area_m2,measured_area_m2,difference_m2"
    assert a.splitlines()[1] == "2016-04-13,512700,445214,67486"


def test_series_csv_and_plot(tmp_path):
    p = SceneParams(size=48, n_steps=8, r0=12, amplitude=4)
    s = generate_scene(p)
    series = build_series(p.dates, s.truth_masks, s.dem, "b")
    path = tmp_path / "b.csv"
    path.write_text(hydro.series_csv(series))
    back = hydro.read_series_csv(path)
    np.testing.assert_allclose(back.volumes, series.volumes, rtol=1e-6)
    y = hydro.plot_series(back, tmp_path / "b.png")
    assert (tmp_path / "b.png").read_bytes()[:4] == b"\x89PNG"
    np.testing.assert_array_equal(y, back.volumes)
