import numpy as np
import pytest

from cmcsphere import diagnostics as dg
from cmcsphere import energy as en
from cmcsphere import fields as fl
from cmcsphere.metric import ConformalFactor, conformal_round

from conftest import mesh_at


@pytest.fixture(scope="module")
def bubble4():
    return fl.bubble_map(mesh_at(4), 50.0)


def test_scan_flags_bubble_not_equator(bubble4):
    rb = dg.concentration_scan(bubble4, 0.0, 0.02)
    re = dg.concentration_scan(fl.equatorial_map(mesh_at(4)), 0.0, 0.02)
    assert len(rb.flagged) > 0 and len(re.flagged) == 0
    # flagged centers sit at the concentration pole
    assert np.all(bubble4.mesh.vertices[rb.flagged] @ np.array([0.0, 0.0, 1.0]) > 0.9)
    assert set(rb.flagged) <= set(rb.centers)
    assert rb.max_local_energy <= 2 * en.perturbed_energy(bubble4, 0.0) + 1e-9
    assert rb.as_dict()["n_centers"] == bubble4.mesh.n_vertices


def test_scan_precondition():
    with pytest.raises(dg.PreconditionError):
        dg.concentration_scan(fl.equatorial_map(mesh_at(2)), 0.1, 0.02)


def test_blowup_recovers_threshold_energy(bubble4):
    rb = dg.concentration_scan(bubble4, 0.0, 0.02)
    c = int(rb.flagged[np.argmax(rb.local_energy[rb.flagged])])
    bu = dg.blowup_rescale(bubble4, c, None, 0.0, n_grid=201)
    assert bu.patch_energy == pytest.approx(dg.ETA0 / 3, rel=0.05)
    assert bu.hopf_residual < 0.1
    assert 0 < bu.t_scale < 0.08
    assert bu.patch.shape == (201, 201, 4)
    assert dg.ball_energy(bubble4, 0.0, c, bu.t_scale) == pytest.approx(dg.ETA0 / 3, rel=1e-4)


def test_blowup_fixed_scale_and_eps(bubble4):
    bu = dg.blowup_rescale(bubble4, (0.0, 0.0, 1.0), 0.01, 0.005, n_grid=101)
    assert bu.t_scale == 0.01 and bu.rescaled_eps == pytest.approx(0.5)


def test_no_concentration_on_equator():
    with pytest.raises(dg.NoConcentrationError):
        dg.blowup_rescale(fl.equatorial_map(mesh_at(3)), 0, None, 0.0, n_grid=51)


def test_smallest_eigenpairs_dense_and_sparse_agree():
    m = mesh_at(3)
    A = m.stiffness.tocsr()
    lam_d, _, res_d = dg.smallest_eigenpairs(A, m.vertex_areas, 6)
    lam_s, _, res_s = dg.smallest_eigenpairs(A, m.vertex_areas, 6, dense_max=0)
    assert np.allclose(lam_d, lam_s, atol=1e-8)
    assert np.all(np.diff(lam_d) >= 0)
    assert max(res_d.max(), res_s.max()) < 1e-8
    # P1 Laplacian: 0 then the triple eigenvalue near 2
    assert abs(lam_d[0]) < 1e-10 and np.allclose(lam_d[1:4], 2.0, rtol=0.01)


@pytest.mark.parametrize("level", [3, 4])
@pytest.mark.parametrize("r", [np.pi / 6, np.pi / 4, np.pi / 3])
def test_bh_geodesic_spectrum(level, r):
    u = fl.geodesic_sphere(mesh_at(level), r)
    rep = dg.morse_index(u, en.residual_minimizing_H(u), 0.0, k=6, which="bh")
    assert rep.index == 1 and rep.nullity == 3
    assert rep.eigenvalues[0] == pytest.approx(-2.0, rel=0.05)
    assert rep.residuals.max() < 1e-8
    assert rep.index + rep.nullity <= 6 and not rep.saturated


def test_equator_hessian_unstable_mode_is_e4():
    m = mesh_at(3)
    rep = dg.morse_index(fl.equatorial_map(m), 0.0, 0.0, k=12)
    assert rep.index == 1
    assert rep.eigenvalues[0] == pytest.approx(-2.0, rel=0.05)
    v = rep.eigenvectors[:, :, 0]
    frac = np.sum(m.vertex_areas * v[:, 3] ** 2) / np.sum(m.vertex_areas[:, None] * v ** 2)
    assert frac > 0.99
    assert np.all(np.diff(rep.eigenvalues) >= -1e-12)
    assert rep.residuals.max() < 1e-8


def test_constant_map_index_zero():
    rep = dg.morse_index(fl.constant_map(mesh_at(3)), 1.0, 0.1, k=6)
    assert rep.index == 0


def test_index_comparison():
    m = mesh_at(3)
    u = fl.geodesic_sphere(m, np.pi / 4)
    ok, ib, ih = dg.index_comparison_check(u, en.residual_minimizing_H(u), k=8)
    assert ok and ib == 1 and ih >= 1
    ok, ib, ih = dg.index_comparison_check(fl.equatorial_map(m), 0.0, k=8)
    assert ok and ih >= 1


def test_unknown_form():
    with pytest.raises(ValueError):
        dg.morse_index(fl.equatorial_map(mesh_at(2)), 0.0, 0.0, which="jacobi")


def test_energy_bound():
    ok, margin, ratio = dg.energy_bound_check(fl.constant_map(mesh_at(2)), 1.0)
    assert ok and ratio == 0.0 and margin > 0
    ratios = [dg.energy_bound_check(fl.equatorial_map(mesh_at(k)), 0.0)[2] for k in (3, 4)]
    assert abs(ratios[1] - 1) < abs(ratios[0] - 1) < 0.02
    g = conformal_round(ConformalFactor.constant(0.1))
    with pytest.raises(ValueError):
        dg.energy_bound_check(fl.equatorial_map(mesh_at(2), g), 0.0)
    with pytest.raises(ValueError):
        dg.energy_bound_check(fl.equatorial_map(mesh_at(2)), 0.0, c0=0.0)


def test_bh_supports_conformal_metric():
    g = conformal_round(ConformalFactor.constant(0.0))
    u = fl.geodesic_sphere(mesh_at(3), np.pi / 4, g)
    rep = dg.morse_index(u, 2.0, 0.0, k=6, which="bh")
    assert rep.index == 1 and rep.nullity == 3
