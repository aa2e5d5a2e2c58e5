import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from dprom.exceptions import ConfigurationError, DefectTooLargeError
from dprom.kinematics import (ModelVariant, StrainVariant, a1_matrix, a3a1_matrix,
                              a_matrices, approx_strain, exact_strain, from_voigt,
                              h_matrix, l_matrices, matrix_to_theta, neumann_bound,
                              theta_to_matrix, to_voigt)


def _matrix_strains(D, Dd):
    """Closed-form matrix expressions of the polynomial strains."""
    S0 = D + D.T + D.T @ D
    lin = -Dd.T @ D.T - D @ Dd
    cub = -Dd.T @ D.T @ D - D.T @ D @ Dd
    return {
        "N1": 0.5 * (S0 + lin + cub),
        "N1t": 0.5 * (S0 + lin),
        "N0": 0.5 * (S0 + Dd.T @ D + D.T @ Dd),
    }


def _small(rng, d, scale):
    A = rng.standard_normal((d, d))
    return A * scale / np.linalg.norm(A, 2)


class TestVoigt:
    @pytest.mark.parametrize("d", [2, 3])
    def test_round_trip(self, d, rng):
        A = rng.standard_normal((d, d))
        S = A + A.T
        np.testing.assert_allclose(from_voigt(to_voigt(S)), S)

    def test_engineering_shear(self):
        E = np.array([[1.0, 0.25], [0.25, 2.0]])
        np.testing.assert_allclose(to_voigt(E), [1.0, 2.0, 0.5])

    @pytest.mark.parametrize("d", [2, 3])
    def test_theta_is_row_major(self, d, rng):
        D = rng.standard_normal((d, d))
        theta = matrix_to_theta(D)
        assert theta[1] == D[0, 1]
        np.testing.assert_array_equal(theta_to_matrix(theta), D)

    @pytest.mark.parametrize("d", [2, 3])
    def test_h_matrix_gives_linear_strain(self, d, rng):
        D = rng.standard_normal((d, d))
        np.testing.assert_allclose(h_matrix(d) @ matrix_to_theta(D),
                                   to_voigt(0.5 * (D + D.T)), atol=1e-15)


class TestOperatorMatrices:
    @pytest.mark.parametrize("d", [2, 3])
    def test_a1_gives_quadratic_strain(self, d, rng):
        D = rng.standard_normal((d, d))
        th = matrix_to_theta(D)
        np.testing.assert_allclose(a1_matrix(th) @ th, to_voigt(D.T @ D), atol=1e-13)

    @pytest.mark.parametrize("d", [2, 3])
    def test_a2_and_a3(self, d, rng):
        D, Dd = rng.standard_normal((2, d, d))
        th, thd = matrix_to_theta(D), matrix_to_theta(Dd)
        A1, A2, A3 = a_matrices(th, thd)
        np.testing.assert_allclose(2 * A2 @ th, to_voigt(-Dd.T @ D.T - D @ Dd), atol=1e-13)
        np.testing.assert_allclose(2 * A3 @ A1 @ th, to_voigt(-Dd.T @ D.T @ D - D.T @ D @ Dd),
                                   atol=1e-13)
        np.testing.assert_allclose(a3a1_matrix(th, thd), A3 @ A1, atol=1e-14)

    @pytest.mark.parametrize("d", [2, 3])
    def test_stacked_inputs(self, d, rng):
        th, thd = rng.standard_normal((2, 5, d * d))
        A1, A2, A3 = a_matrices(th, thd)
        for k in range(5):
            B1, B2, B3 = a_matrices(th[k], thd[k])
            np.testing.assert_allclose(A3[k], B3)
            np.testing.assert_allclose(A2[k], B2)

    def test_mismatched_lengths_raise(self):
        with pytest.raises(ConfigurationError):
            a_matrices(np.zeros(4), np.zeros(9))

    def test_l_arrays_are_sparse_and_nonnegative(self):
        L = l_matrices(3)
        for arr in (L.L1, L.L2, L.L3):
            assert arr.min() >= 0
        np.testing.assert_array_equal(L.L2s, -L.L2)
        assert np.count_nonzero(L.L3) == 135
        assert np.count_nonzero(l_matrices(2).L3) == 24


class TestStrains:
    @pytest.mark.parametrize("d", [2, 3])
    @pytest.mark.parametrize("variant", ["N1", "N1t", "N0"])
    def test_matches_matrix_expressions(self, d, variant, rng):
        D, Dd = _small(rng, d, 0.5), _small(rng, d, 0.2)
        got = approx_strain(matrix_to_theta(D), matrix_to_theta(Dd), variant)
        np.testing.assert_allclose(got, to_voigt(_matrix_strains(D, Dd)[variant]),
                                   atol=1e-14)

    @pytest.mark.parametrize("variant", ["N1", "N1t", "N0", "Exact"])
    def test_no_defect_gives_green_lagrange(self, variant, rng):
        D = rng.standard_normal((3, 3))
        got = approx_strain(matrix_to_theta(D), np.zeros(9), variant)
        np.testing.assert_allclose(got, to_voigt(0.5 * (D + D.T + D.T @ D)), atol=1e-13)

    def test_exact_strain_direct_formula(self, rng):
        # strain of the total map from the defected configuration
        D, Dd = _small(rng, 3, 0.4), _small(rng, 3, 0.3)
        F1 = np.eye(3) + Dd
        F = (np.eye(3) + Dd + D) @ np.linalg.inv(F1)
        np.testing.assert_allclose(exact_strain(D, Dd), to_voigt(0.5 * (F.T @ F - np.eye(3))),
                                   atol=1e-14)

    def test_truncation_orders_in_defect(self, rng):
        D, Dd = _small(rng, 3, 0.3), _small(rng, 3, 0.2)
        th = matrix_to_theta(D)

        def err(variant, s):
            thd = matrix_to_theta(s * Dd)
            return np.linalg.norm(approx_strain(th, thd, variant) - exact_strain(D, s * Dd))

        ratio_n1 = err("N1", 1e-2) / err("N1", 5e-3)
        ratio_n0 = err("N0", 1e-2) / err("N0", 5e-3)
        assert 3.8 < ratio_n1 < 4.2
        assert 1.9 < ratio_n0 < 2.1

    def test_n1t_differs_by_cubic_terms(self, rng):
        D, Dd = _small(rng, 2, 1e-3), _small(rng, 2, 0.1)
        th, thd = matrix_to_theta(D), matrix_to_theta(Dd)
        diff = approx_strain(th, thd, "N1") - approx_strain(th, thd, "N1t")
        np.testing.assert_allclose(diff, to_voigt(0.5 * (-Dd.T @ D.T @ D - D.T @ D @ Dd)),
                                   atol=1e-20)

    def test_singular_defect_raises(self):
        Dd = -np.eye(2)
        with pytest.raises(DefectTooLargeError):
            exact_strain(np.zeros((2, 2)), Dd)

    def test_orientation_reversing_defect_raises(self):
        Dd = np.diag([-2.0, 0.0, 0.0])
        with pytest.raises(DefectTooLargeError):
            exact_strain(np.zeros((3, 3)), Dd)


class TestObjectivity:
    def test_rotation_of_defected_body_is_strain_free(self, rng):
        for _ in range(20):
            R = Rotation.random(random_state=rng).as_matrix()
            Dd = _small(rng, 3, 0.3)
            D = (R - np.eye(3)) @ (np.eye(3) + Dd)
            np.testing.assert_allclose(exact_strain(D, Dd), 0.0, atol=1e-14)

    def test_literal_rotation_gradient_with_defect_is_not_rigid(self, rng):
        # D = R - I only describes a rigid motion when the body is undefected
        R = Rotation.from_rotvec([0.0, 0.0, 0.3]).as_matrix()
        Dd = np.diag([0.1, 0.0, 0.0])
        assert np.abs(exact_strain(R - np.eye(3), Dd)).max() > 1e-3
        np.testing.assert_allclose(exact_strain(R - np.eye(3), np.zeros((3, 3))), 0.0,
                                   atol=1e-15)


class TestNeumann:
    def test_zero_defect(self):
        b = neumann_bound(np.zeros((3, 3)), 1)
        assert b.epsilon == 0 and b.delta_n == 0

    def test_divergent_series_warns(self):
        with pytest.warns(RuntimeWarning):
            b = neumann_bound(1.5 * np.eye(2), 1)
        assert np.isnan(b.delta_lim)

    def test_negative_order_rejected(self):
        with pytest.raises(ConfigurationError):
            neumann_bound(np.zeros((2, 2)), -1)


class TestVariantNames:
    @pytest.mark.parametrize("text,strain,vol", [
        ("N1", StrainVariant.N1, False), ("n1t-v", StrainVariant.N1T, True),
        ("N0-v", StrainVariant.N0, True), ("Exact", StrainVariant.EXACT, False)])
    def test_parse(self, text, strain, vol):
        v = ModelVariant.parse(text)
        assert v.strain is strain and v.volume_correction is vol
        assert ModelVariant.parse(v.name) == v

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            ModelVariant.parse("N2")


_mat3 = arrays(np.float64, (3, 3), elements=st.floats(-1, 1))


@settings(max_examples=200, deadline=None)
@given(_mat3, st.floats(0.0, 0.95), st.integers(0, 3))
def test_neumann_bound_property(A, eps, N):
    norm = np.linalg.norm(A, 2)
    if norm < 1e-6:
        return
    b = neumann_bound(A * eps / norm, N)
    assert b.delta_n <= b.delta_lim * (1 + 1e-10) + 1e-15


@settings(max_examples=100, deadline=None)
@given(_mat3, _mat3)
def test_variants_agree_near_zero_defect(D, Dd):
    # every variant equals the exact strain to first order in D at zero defect
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        th = matrix_to_theta(1e-4 * D)
        exact = exact_strain(1e-4 * D, np.zeros((3, 3)))
        for v in ("N1", "N1t", "N0"):
            np.testing.assert_allclose(approx_strain(th, np.zeros(9), v), exact, atol=1e-15)
        # small defects keep the exact strain finite and polynomial variants close
        Ds = 0.1 * Dd
        if np.linalg.det(np.eye(3) + Ds) > 0.5:
            e = exact_strain(1e-4 * D, Ds)
            n1 = approx_strain(th, matrix_to_theta(Ds), "N1")
            assert np.linalg.norm(n1 - e) <= 20 * np.linalg.norm(Ds, 2) ** 2 * np.linalg.norm(e) + 1e-12
