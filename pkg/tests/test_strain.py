import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snvspin.strain import (
    ORIENTATIONS,
    StrainSusceptibilities,
    StrainTensor,
    SymmetryComponents,
    analytic_splitting,
    frame_for_axis,
    ghz_to_nm,
    orientation_frame,
    rot_y,
    rot_z,
    rotate_strain,
    splitting_and_zpl,
    strain_hamiltonian,
    strain_map,
    symmetry_components,
    to_defect_frame,
)
from snvspin.synthetic import cut_strain_grid

comps = st.floats(-1e-3, 1e-3)
tensors = st.builds(StrainTensor, comps, comps, comps, comps, comps, comps)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def test_tensor_validation_and_matrix_round_trip():
    eps = StrainTensor(1, 2, 3, 4, 5, 6)
    assert np.array_equal(eps.matrix(), eps.matrix().T)
    assert StrainTensor.from_matrix(eps.matrix()) == eps
    assert eps.trace == 6
    with pytest.raises(ValueError):
        StrainTensor(math.nan)


def test_frames_map_axis_to_z():
    for label, axis in ORIENTATIONS.items():
        r = orientation_frame(label)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(r @ np.array(axis), [0, 0, 1], atol=1e-14)


def test_reference_orientation_matches_two_angle_rotation():
    # the [-1-11] frame is Rz(90) Ry(polar) with the polar angle of <111>
    polar = math.degrees(math.acos(1 / math.sqrt(3)))
    assert np.allclose(orientation_frame("[-1-11]"), rot_z(90) @ rot_y(polar), atol=1e-14)
    eps = StrainTensor(1e-4, -2e-4, 3e-5, 4e-5, 0, 1e-5)
    assert np.allclose(to_defect_frame(eps, "[-1-11]").matrix(), rotate_strain(eps, 90, polar).matrix(), atol=1e-18)


def test_orientation_errors():
    with pytest.raises(ValueError):
        orientation_frame("[100]")
    with pytest.raises(ValueError):
        orientation_frame(np.ones((3, 3)))
    with pytest.raises(ValueError):
        frame_for_axis((0, 0, 0))


def test_isotropic_strain_gives_no_splitting():
    for s in (1e-5, 1e-4, -3e-4):
        for label in ORIENTATIONS:
            gs, zpl = splitting_and_zpl(StrainTensor(s, s, s), label)
            assert gs == pytest.approx(0.0, abs=1e-9)
            chi = StrainSusceptibilities()
            assert zpl == pytest.approx(s * (2 * chi.t_perp + chi.t_par), rel=1e-12)


def test_pure_shear_splits():
    gs, zpl = splitting_and_zpl(StrainTensor(xy=1e-4), np.eye(3))
    assert gs == pytest.approx(2 * 2 * 0.8e6 * 1e-4, rel=1e-12)
    assert zpl == 0.0


def test_hamiltonian_example_3_4():
    h = strain_hamiltonian(SymmetryComponents(10.0, 3.0, 4.0))
    e = np.linalg.eigvalsh(h)
    assert e == pytest.approx([5, 5, 15, 15], abs=1e-12)
    assert analytic_splitting(SymmetryComponents(10.0, 3.0, 4.0)) == 10.0


@settings(max_examples=200, deadline=None)
@given(tensors, st.sampled_from(sorted(ORIENTATIONS)))
def test_analytic_matches_diagonalization(eps, label):
    gs, _ = splitting_and_zpl(eps, label)
    ref = analytic_splitting(symmetry_components(to_defect_frame(eps, label)))
    assert abs(gs - ref) <= 1e-10 * max(ref, 1.0)


@settings(max_examples=200, deadline=None)
@given(tensors, st.floats(-180, 180), st.floats(-180, 180))
def test_rotation_preserves_invariants(eps, theta, phi):
    rot = rotate_strain(eps, theta, phi)
    scale = max(np.linalg.norm(eps.matrix()), 1e-300)
    assert abs(rot.trace - eps.trace) <= 1e-12 * scale
    assert abs(np.linalg.norm(rot.matrix()) - np.linalg.norm(eps.matrix())) <= 1e-12 * scale


def test_global_rotation_invariance_with_explicit_frames():
    rng = np.random.default_rng(3)
    for _ in range(50):
        eps = StrainTensor(*rng.normal(0, 1e-4, 6))
        frame = random_rotation(rng)
        g = random_rotation(rng)
        rotated = StrainTensor.from_matrix(g @ eps.matrix() @ g.T)
        a = splitting_and_zpl(eps, frame)
        b = splitting_and_zpl(rotated, frame @ g.T)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-9)


def test_cut_fixture_zpl_identical_across_orientations():
    rows = strain_map(cut_strain_grid())
    assert len(rows) == 21 * 4
    for i in range(0, len(rows), 4):
        zpl = [r.zpl_shift for r in rows[i:i + 4]]
        assert max(zpl) - min(zpl) <= 1e-12 * max(1.0, max(abs(z) for z in zpl))
        assert [r.orientation for r in rows[i:i + 4]] == list(ORIENTATIONS)


def test_generic_strain_distinguishes_orientations():
    eps = StrainTensor(1e-4, 0, 0, 0, 2e-5, 0)
    zpl = {label: splitting_and_zpl(eps, label)[1] for label in ORIENTATIONS}
    assert max(zpl.values()) - min(zpl.values()) > 1.0


def test_strain_map_rejects_malformed_rows():
    with pytest.raises(ValueError, match="empty"):
        strain_map([])
    with pytest.raises(ValueError, match="row 0"):
        strain_map([(0.0, 0.0)])
    with pytest.raises(ValueError, match="StrainTensor"):
        strain_map([(0.0, 0.0, (1, 2, 3))])
    with pytest.raises(ValueError, match="finite"):
        strain_map([(math.inf, 0.0, StrainTensor())])


def test_ghz_to_nm():
    assert float(ghz_to_nm(783.0)) == pytest.approx(-783.0 * 619.0**2 / 299792458.0, rel=1e-12)
    assert float(ghz_to_nm(783.0)) == pytest.approx(-1.0007, abs=1e-4)
    assert np.allclose(ghz_to_nm([0.0, -1.0]), [0.0, -float(ghz_to_nm(1.0))])
