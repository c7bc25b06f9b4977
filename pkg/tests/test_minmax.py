import warnings

import numpy as np
import pytest

from cmcsphere import fields as fl
from cmcsphere.flow import FlowConfig
from cmcsphere.minmax import (
    DegreeChangeError,
    MinMaxConfig,
    MonotonicityWarning,
    Sweepout,
    _check_degree,
    good_slice_extract,
    latitude_sweepout,
    mountain_pass,
    omega_over_h_scan,
    sweepout_max,
)

from conftest import mesh_at


@pytest.fixture(scope="module")
def sw3():
    return latitude_sweepout(mesh_at(3), S=32)


def test_latitude_sweepout_structure(sw3):
    assert len(sw3) >= 32  # polar gaps are refined below delta0 / 2
    assert sw3.slices[0].is_constant and sw3.slices[-1].is_constant
    assert sw3.degree == 1
    assert sw3.tracked_volumes[0] == 0.0
    assert np.all(np.diff(sw3.tracked_volumes) > 0)
    k, e = sweepout_max(sw3, 0.0, 0.0)
    assert e == pytest.approx(4 * np.pi, rel=0.02)


def test_sweepout_validation_and_refinement():
    m = mesh_at(2)
    with pytest.raises(ValueError):
        Sweepout([fl.constant_map(m)] * 2)
    with pytest.raises(ValueError):
        Sweepout([fl.equatorial_map(m), fl.constant_map(m), fl.constant_map(m)])
    coarse = Sweepout([fl.latitude_map(m, c) for c in (-1.0, -0.5, 0.0, 0.5, 1.0)])
    gaps = [np.max(np.linalg.norm(b.values - a.values, axis=1)) for a, b in zip(coarse.slices[:-1], coarse.slices[1:])]
    assert len(coarse) > 5 and max(gaps) < coarse.delta0
    assert coarse.degree == 1
    with pytest.raises(ValueError):
        latitude_sweepout(m, S=2)


def test_sweepout_max_lowest_index_on_ties():
    m = mesh_at(2)
    c = fl.constant_map(m)
    sw = Sweepout([c, c, c])
    assert sweepout_max(sw, 0.0, 0.1) == (0, 0.0)


def test_minmax_config_validation():
    with pytest.raises(ValueError):
        MinMaxConfig(outer_iters=-1)
    with pytest.raises(ValueError):
        MinMaxConfig(volume_every=0)


def test_zero_steps_returns_input(sw3):
    sw, rec = mountain_pass(sw3, 0.0, 0.05, MinMaxConfig(descent_steps=0))
    assert sw is sw3 and rec.status == "unchanged"
    assert rec.omega == pytest.approx(sweepout_max(sw3, 0.0, 0.05)[1])


def test_mountain_pass_invariants(sw3):
    sw, rec = mountain_pass(sw3, 0.5, 0.05, MinMaxConfig(outer_iters=15))
    # endpoints pinned bitwise, degree preserved, omega above the collapse threshold
    assert np.array_equal(sw.slices[0].values, sw3.slices[0].values)
    assert np.array_equal(sw.slices[-1].values, sw3.slices[-1].values)
    assert sw.degree == 1 and rec.degree == 1
    assert rec.omega >= 0 and rec.d_eps_at_argmax > FlowConfig().beta_collapse
    # the sampled initial max undershoots the continuum max; the climbed saddle may sit slightly above it
    assert rec.omega <= rec.history[0] * (1 + 1e-3)
    assert rec.omega == pytest.approx(sweepout_max(sw, 0.5, 0.05)[1])


def test_degree_change_detected(sw3):
    V = sw3.tracked_volumes.copy()
    V[-1] = 0.0
    with pytest.raises(DegreeChangeError):
        _check_degree(V, sw3)


def test_inadmissible_sweepout_rejected():
    m = mesh_at(2)
    c = fl.constant_map(m)
    with pytest.raises(ValueError, match="degree"):
        mountain_pass(Sweepout([c, fl.equatorial_map(m), c]), 0.0, 0.05)


def test_h_grid_validation(sw3):
    with pytest.raises(ValueError):
        omega_over_h_scan([0.5, 0.25], 0.05, sw3)
    with pytest.raises(ValueError):
        omega_over_h_scan([0.0, 0.5], 0.05, sw3)


def test_omega_scan_rows_and_warning(sw3):
    cfg = MinMaxConfig(outer_iters=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MonotonicityWarning)
        rows = omega_over_h_scan([0.25, 0.5], 0.05, sw3, cfg)
    assert rows[0]["neg_deriv"] is None
    assert rows[1]["neg_deriv"] == pytest.approx(-(rows[1]["omega_over_H"] - rows[0]["omega_over_H"]) / 0.25)
    assert rows[1]["omega_over_H"] <= rows[0]["omega_over_H"] * 1.02


def test_good_slice_extract(sw3):
    e = sw3.energies(0.5, 0.05)
    every = good_slice_extract(sw3, 0.5, 0.05, alpha=10 * e.max(), C=1e9)
    assert [s["index"] for s in every] == list(range(1, len(sw3) - 1))
    assert all(s["bounded"] for s in every)
    top = good_slice_extract(sw3, 0.5, 0.05, alpha=1e-12, C=0.0)
    assert [s["index"] for s in top] == [int(np.argmax(e))]
    assert not top[0]["bounded"]
