import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenrank.dicematrix import (
    DiceMatrix,
    EigenSolverError,
    NotPSDError,
    build_dice_matrix,
    dominance_ratio,
    eigenvalues,
    is_psd,
    jacobi_eigh,
    lambda_max,
    spectral_summary,
    trio_feasibility,
    von_neumann_entropy,
)
from eigenrank.masks import BinaryMask, MaskShapeError

from conftest import random_mask
from oracles import charpoly_roots

UNVIABLE = [[1, 1, 1], [1, 1, 0], [1, 0, 1]]


def m(pixels):
    return BinaryMask(len(pixels), 1, pixels)


class TestBuild:
    def test_identical_masks_give_all_ones(self):
        a = m([1, 1, 0, 0])
        assert np.array_equal(build_dice_matrix([a, a, a]).entries, np.ones((3, 3)))

    def test_disjoint_masks_give_identity(self):
        masks = [m([1, 0, 0]), m([0, 1, 0]), m([0, 0, 1])]
        assert np.array_equal(build_dice_matrix(masks).entries, np.eye(3))

    def test_hand_computed_entries(self):
        d = build_dice_matrix([m([1, 1, 0, 0]), m([1, 0, 1, 0]), m([1, 1, 1, 0])]).entries
        assert d[0, 1] == 0.5
        assert d[0, 2] == pytest.approx(0.8, abs=1e-15)
        assert d[1, 2] == pytest.approx(0.8, abs=1e-15)
        assert np.array_equal(np.diag(d), np.ones(3))

    def test_jaccard_metric(self):
        d = build_dice_matrix([m([1, 1, 0, 0]), m([1, 0, 1, 0])], metric="jaccard").entries
        assert d[0, 1] == pytest.approx(1 / 3)

    def test_errors(self):
        with pytest.raises(ValueError):
            build_dice_matrix([m([1, 0])])
        with pytest.raises(MaskShapeError):
            build_dice_matrix([m([1, 0]), m([1, 0, 0])])
        with pytest.raises(ValueError):
            build_dice_matrix([m([1, 0]), m([1, 0])], metric="hausdorff")

    def test_dicematrix_validation(self):
        with pytest.raises(ValueError):
            DiceMatrix([[1, 0.5], [0.4, 1]])
        with pytest.raises(ValueError):
            DiceMatrix([[0.9, 0.5], [0.5, 1]])
        with pytest.raises(ValueError):
            DiceMatrix([[1, 1.5], [1.5, 1]])
        with pytest.raises(ValueError):
            DiceMatrix([[1]])


class TestSpectrum:
    @pytest.mark.parametrize("t", [2, 3, 5, 12, 20])
    def test_all_ones(self, t):
        lam = eigenvalues(np.ones((t, t)))
        assert lam[0] == pytest.approx(t, abs=1e-9)
        assert np.allclose(lam[1:], 0.0, atol=1e-9)

    @pytest.mark.parametrize("t", [2, 3, 7])
    def test_identity(self, t):
        assert np.allclose(eigenvalues(np.eye(t)), 1.0, atol=1e-12)

    def test_unviable_matrix(self):
        lam = eigenvalues(UNVIABLE)
        expected = [1 + math.sqrt(2), 1.0, 1 - math.sqrt(2)]
        assert np.allclose(lam, expected, atol=1e-12)
        assert lambda_max(UNVIABLE) == pytest.approx(1 + math.sqrt(2), abs=1e-12)

    def test_lambda_max_examples(self):
        assert lambda_max(np.ones((5, 5))) == pytest.approx(5.0, abs=1e-12)
        assert lambda_max(np.eye(5)) == pytest.approx(1.0, abs=1e-12)

    def test_sorted_descending(self, rng):
        a = rng.standard_normal((6, 6))
        lam = eigenvalues(a + a.T)
        assert np.all(np.diff(lam) <= 0)

    def test_reconstruction(self, rng):
        for t in (2, 3, 5, 9, 16):
            a = rng.standard_normal((t, t))
            a = a + a.T
            vals, vecs = jacobi_eigh(a)
            assert np.abs(vecs @ np.diag(vals) @ vecs.T - a).max() < 1e-10
            assert np.abs(vecs.T @ vecs - np.eye(t)).max() < 1e-12

    def test_against_characteristic_polynomial(self, rng):
        for i in range(200):
            n = 3 if i % 2 else 4
            a = rng.uniform(-1, 1, (n, n))
            a = (a + a.T) / 2
            assert np.allclose(eigenvalues(a), charpoly_roots(a), atol=1e-8, rtol=0)

    def test_non_convergence_reports_residual(self, rng):
        a = rng.standard_normal((6, 6))
        with pytest.raises(EigenSolverError) as info:
            jacobi_eigh(a + a.T, max_sweeps=1)
        assert info.value.residual > 0

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigh([[1.0, 2.0], [0.0, 1.0]])


class TestEntropy:
    def test_identity_spectrum(self):
        assert von_neumann_entropy([1, 1, 1]) == 0.0

    def test_rank_one_spectrum(self):
        assert von_neumann_entropy([3, 0, 0]) == pytest.approx(-3 * math.log(3), abs=1e-14)
        assert von_neumann_entropy([3, 0, 0], normalized=True) == 0.0

    def test_mixed_spectrum(self):
        assert von_neumann_entropy([2, 0.5, 0.5]) == pytest.approx(-math.log(2), abs=1e-14)

    def test_normalized_uniform(self):
        assert von_neumann_entropy([1, 1, 1, 1], normalized=True) == pytest.approx(math.log(4))

    def test_tiny_negatives_clamped(self):
        assert von_neumann_entropy([2, -1e-12]) == pytest.approx(-2 * math.log(2))

    def test_negative_spectrum_rejected(self):
        with pytest.raises(NotPSDError):
            von_neumann_entropy([2.414, 1.0, -0.414])

    def test_summary(self):
        s = spectral_summary(np.ones((4, 4)))
        assert s.lambda_max == pytest.approx(4.0)
        assert s.eigenvalues[0] == s.lambda_max
        assert s.entropy_raw == pytest.approx(-4 * math.log(4))
        assert s.entropy_normalized == pytest.approx(0.0, abs=1e-12)
        assert sum(s.eigenvalues) == pytest.approx(4.0, abs=1e-9)


class TestPSD:
    def test_examples(self):
        assert is_psd(np.eye(4), 1e-8)
        assert not is_psd(UNVIABLE, 1e-8)

    def test_mask_built_matrices(self, rng):
        for _ in range(300):
            t = int(rng.integers(2, 13))
            masks = [random_mask(rng, 16, 16) for _ in range(t)]
            d = build_dice_matrix(masks)
            lam = eigenvalues(d)
            assert lam[-1] >= -1e-8
            assert abs(lam.sum() - t) < 1e-9
            assert 1 - 1e-9 <= lam[0] <= t + 1e-9
            e = d.entries
            for p in range(t):
                for q in range(p + 1, t):
                    for r in range(q + 1, t):
                        assert trio_feasibility(e[p, q], e[q, r], e[r, p])

    def test_jaccard_matrices_psd(self, rng):
        for _ in range(100):
            masks = [random_mask(rng, 16, 16) for _ in range(int(rng.integers(2, 9)))]
            assert is_psd(build_dice_matrix(masks, metric="jaccard"))

    def test_lambda_max_equals_t_iff_identical(self, rng):
        a = random_mask(rng)
        assert lambda_max(build_dice_matrix([a] * 4)) == pytest.approx(4.0, abs=1e-12)
        b = random_mask(rng)
        assert lambda_max(build_dice_matrix([a, a, a, b])) < 4.0 - 1e-6


class TestTrio:
    def test_examples(self):
        assert trio_feasibility(1, 1, 1)
        assert not trio_feasibility(1, 1, 0)
        assert trio_feasibility(0.9, 0.9, 0.9)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            trio_feasibility(1.1, 0.5, 0.5)
        with pytest.raises(ValueError):
            trio_feasibility(-0.1, 0.5, 0.5)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_matches_3x3_determinant(self, a, b, c):
        # For a unit-diagonal 3x3 matrix the trio condition is det >= 0.
        det = np.linalg.det(np.array([[1, a, c], [a, 1, b], [c, b, 1]]))
        if det > 1e-7:
            assert trio_feasibility(a, b, c)
        elif det < -1e-7:
            assert not trio_feasibility(a, b, c)


class TestDominance:
    def test_full_agreement(self):
        assert dominance_ratio([2, 0]) == 1.0

    def test_identity_undefined(self):
        assert dominance_ratio([1, 1, 1]) is None

    def test_hand_value(self):
        lam = [2.5, 0.3, 0.2]
        num = 2.5 * math.log(2.5)
        den = num + 0.3 * math.log(0.3) + 0.2 * math.log(0.2)
        assert dominance_ratio(lam) == pytest.approx(num / den, rel=1e-14)

    def test_all_ones_matrix_exact(self):
        for t in range(2, 21):
            assert dominance_ratio(eigenvalues(np.ones((t, t)))) == 1.0
