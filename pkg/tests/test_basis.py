import warnings

import numpy as np
import pytest

from dprom.basis import (SensitivityContext, TangentDerivatives, assemble_basis,
                         build_reduction_basis, defect_sensitivity, md_pairs,
                         mds_and_ds2, mds_vector, modal_derivative,
                         second_defect_sensitivity, vibration_modes)
from dprom.defects import DefectBasis, arch_sine, beam_taper
from dprom.exceptions import ConfigurationError
from dprom.full_model import assemble, linear_stiffness, mass_matrix


@pytest.fixture(scope="module")
def defects(small_beam):
    return DefectBasis.stack([arch_sine(small_beam), beam_taper(small_beam, amplitude=0.005)])


@pytest.fixture(scope="module")
def ctx(small_beam, defects):
    return SensitivityContext(small_beam, defects, n_modes=3)


def _K(mesh, U, u, xi, variant):
    return assemble(mesh, u, U, xi, variant).K.toarray()


def _rel(A, B):
    return np.abs(A - B).max() / np.abs(B).max()


class TestVibrationModes:
    def test_mass_orthonormal_and_stiffness_diagonal(self, small_beam):
        K0, M = linear_stiffness(small_beam), mass_matrix(small_beam)
        Phi, w = vibration_modes(K0, M, 4)
        np.testing.assert_allclose(Phi.T @ M @ Phi, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(Phi.T @ K0 @ Phi, np.diag(w ** 2), rtol=1e-10,
                                   atol=1e-10 * w[-1] ** 2)
        assert np.all(np.diff(w) > 0)

    def test_invalid_count(self, small_beam):
        with pytest.raises(ConfigurationError):
            vibration_modes(linear_stiffness(small_beam), mass_matrix(small_beam), 0)


class TestTangentDerivatives:
    """Closed-form derivatives against differences of the assembled tangent."""

    @pytest.mark.parametrize("variant", ["N1", "N1t", "N0"])
    def test_dK_deta(self, small_beam, defects, ctx, variant):
        d = TangentDerivatives(small_beam, defects, variant)
        phi, h = ctx.Phi[:, 1], 1e-4
        fd = (_K(small_beam, defects, h * phi, [0, 0], variant)
              - _K(small_beam, defects, -h * phi, [0, 0], variant)) / (2 * h)
        assert _rel(d.dK_deta(phi).toarray(), fd) < 1e-8

    @pytest.mark.parametrize("variant", ["N1", "N1t", "N0"])
    @pytest.mark.parametrize("j", [0, 1])
    def test_dK_dxi(self, small_beam, defects, variant, j):
        d = TangentDerivatives(small_beam, defects, variant)
        z, e, h = np.zeros(small_beam.n_free), np.eye(2)[j], 1e-4
        fd = (_K(small_beam, defects, z, h * e, variant)
              - _K(small_beam, defects, z, -h * e, variant)) / (2 * h)
        assert _rel(d.dK_dxi(j).toarray(), fd) < 1e-8

    @pytest.mark.parametrize("variant", ["N1", "N1t", "N0"])
    def test_mixed_second_derivative(self, small_beam, defects, ctx, variant):
        d = TangentDerivatives(small_beam, defects, variant)
        phi, e, h = ctx.Phi[:, 0], np.array([0.0, 1.0]), 1e-3
        K = {(a, b): _K(small_beam, defects, a * h * phi, b * h * e, variant)
             for a in (1, -1) for b in (1, -1)}
        fd = (K[1, 1] - K[1, -1] - K[-1, 1] + K[-1, -1]) / (4 * h * h)
        assert _rel(d.d2K_deta_dxi(phi, 1).toarray(), fd) < 1e-6

    @pytest.mark.parametrize("variant", ["N1", "N0"])
    def test_second_defect_derivative(self, small_beam, defects, variant):
        d = TangentDerivatives(small_beam, defects, variant)
        z, h = np.zeros(small_beam.n_free), 1e-3
        K = {(a, b): _K(small_beam, defects, z, [a * h, b * h], variant)
             for a in (1, -1) for b in (1, -1)}
        fd = (K[1, 1] - K[1, -1] - K[-1, 1] + K[-1, -1]) / (4 * h * h)
        assert _rel(d.d2K_dxi2(0, 1).toarray(), fd) < 1e-6

    def test_exact_variant_rejected(self, small_beam, defects):
        with pytest.raises(ConfigurationError):
            TangentDerivatives(small_beam, defects, "Exact")

    def test_defect_derivative_needs_defects(self, small_beam):
        with pytest.raises(ConfigurationError):
            TangentDerivatives(small_beam).dK_dxi(0)


class TestSensitivities:
    def test_modal_derivatives_are_symmetric(self, ctx):
        np.testing.assert_allclose(modal_derivative(ctx, 0, 2), modal_derivative(ctx, 2, 0),
                                   atol=1e-10 * np.abs(modal_derivative(ctx, 0, 2)).max())

    def test_defect_sensitivity_solves_its_equation(self, ctx):
        x = defect_sensitivity(ctx, 1, 0)
        r = ctx.K0 @ x + ctx.dK_dxi(0) @ ctx.Phi[:, 1]
        assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(ctx.dK_dxi(0) @ ctx.Phi[:, 1])

    def test_defect_sensitivity_is_eigenvector_derivative_direction(self, small_beam, defects,
                                                                    ctx):
        # K0 Xi + dK Phi = 0 means Xi is the static correction of Phi under a defect;
        # the defected modes move within span(Phi, Xi) to first order
        h = 1e-5
        K = linear_stiffness(small_beam, defects, [0.0, h])
        Phi_h, _ = vibration_modes(K, ctx.M, 3)
        dphi = (Phi_h[:, 0] - ctx.Phi[:, 0]) / h
        B = np.column_stack([ctx.Phi, defect_sensitivity(ctx, 0, 1)])
        res = dphi - B @ np.linalg.lstsq(B, dphi, rcond=None)[0]
        assert np.linalg.norm(res) < 0.05 * np.linalg.norm(dphi)

    def test_combined_and_single_second_order_vectors_agree(self, ctx):
        mds, ds2 = mds_and_ds2(ctx, 0, 1, 1)
        np.testing.assert_allclose(mds, mds_vector(ctx, 0, 1, 1))
        np.testing.assert_allclose(ds2, second_defect_sensitivity(ctx, 0, 1, 1))

    def test_second_defect_sensitivity_is_symmetric(self, ctx):
        a = second_defect_sensitivity(ctx, 0, 0, 1)
        np.testing.assert_allclose(a, second_defect_sensitivity(ctx, 0, 1, 0),
                                   atol=1e-12 * np.abs(a).max())

    def test_mds_index_beyond_defects_has_no_ds2(self, ctx):
        _, ds2 = mds_and_ds2(ctx, 0, 2, 0)
        assert ds2 is None


class TestBasisAssembly:
    def test_layout_and_labels(self, small_beam, defects):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            B = build_reduction_basis(small_beam, defects, n_vm=3)
        assert B.m + len(B.dropped) == 3 + len(md_pairs(3)) + 3 * 2
        assert B.labels[:4] == ["VM 1", "VM 2", "VM 3", "MD 1,1"]
        assert "DS 1,2" in B.labels + B.dropped
        np.testing.assert_allclose(np.linalg.norm(B.V, axis=0), 1.0)
        assert np.linalg.matrix_rank(B.V) == B.m

    def test_second_order_vectors_extend_the_basis(self, small_beam, defects):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            B = build_reduction_basis(small_beam, defects, n_vm=2, mds=True, ds2=True)
        assert any(lab.startswith("MDS") for lab in B.labels)
        assert any(lab.startswith("DS2") for lab in B.labels)

    def test_vibration_modes_only(self, small_beam):
        B = build_reduction_basis(small_beam, None, n_vm=4, modal_derivatives=False)
        assert B.labels == ["VM 1", "VM 2", "VM 3", "VM 4"]
        assert B.omega.shape == (4,)

    def test_duplicate_columns_are_dropped_with_warning(self, rng):
        a, b = rng.standard_normal((2, 10))
        with pytest.warns(UserWarning, match="c"):
            B = assemble_basis([a, b, 3 * a + 1e-12 * b, a + b], ["a", "b", "c", "d"])
        assert B.labels == ["a", "b"] and B.dropped == ["c", "d"]
        np.testing.assert_allclose(B.norms, np.linalg.norm([a, b], axis=1))

    def test_zero_column_dropped(self, rng):
        with pytest.warns(UserWarning):
            B = assemble_basis([rng.standard_normal(5), np.zeros(5)], ["a", "z"])
        assert B.dropped == ["z"]

    def test_label_count_checked(self, rng):
        with pytest.raises(ConfigurationError):
            assemble_basis([rng.standard_normal(4)], ["a", "b"])

    def test_export(self, small_beam, tmp_path):
        B = build_reduction_basis(small_beam, None, n_vm=2)
        B.export(tmp_path / "V.csv")
        lines = (tmp_path / "V.csv").read_text().splitlines()
        assert lines[0] == "VM 1,VM 2,MD 1;1,MD 1;2,MD 2;2"
        np.testing.assert_allclose(np.loadtxt(tmp_path / "V.csv", delimiter=",", skiprows=1),
                                   B.V)
