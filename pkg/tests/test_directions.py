import itertools

import numpy as np
import pytest

from cutfd.directions import (DecompositionError, DirectionSet,
                              build_axis_directions,
                              build_decomposition_directions,
                              build_standard_directions, cutoff_P,
                              cutoff_P_gradient, decompose_spd,
                              hessian_to_pure, pure_to_mixed)


def brute_force_envelope(z, delta_hat):
    """Independent oracle: enumerate every corner of the coefficient box."""
    lo, hi = delta_hat / 2.0, 2.0 / delta_hat
    best = -np.inf
    for corner in itertools.product((lo, hi), repeat=len(z)):
        best = max(best, sum(a * zz for a, zz in zip(corner, z)))
    return best


class TestStandardDirections:
    def test_d3_counts(self):
        ds = build_standard_directions(3, 1 / 3)
        assert ds.m == 9
        assert ds.vectors.shape == (18, 3)
        assert ds.lattice_denominator == 2

    def test_d1_degenerate(self):
        ds = build_standard_directions(1, 1.0)
        assert ds.lattice_denominator == 1
        assert sorted(ds.vectors[:, 0].tolist()) == [-1.0, 1.0]

    def test_d2_contains_halfsums(self):
        ds = build_standard_directions(2, 0.5)
        rows = {tuple(r) for r in ds.vectors.tolist()}
        assert (0.5, 0.5) in rows
        assert (0.5, -0.5) in rows

    def test_negation_pairing_and_unit_ball(self):
        ds = build_standard_directions(3, 0.5)
        assert np.array_equal(ds.vectors[ds.m:], -ds.vectors[:ds.m])
        assert np.all(np.linalg.norm(ds.vectors, axis=1) <= 1.0 + 1e-15)

    def test_delta_hat_default_is_quarter_delta(self):
        ds = build_standard_directions(2, 0.8)
        assert ds.delta_hat == pytest.approx(0.2)

    def test_bad_dimension_rejected(self):
        with pytest.raises(ValueError):
            build_standard_directions(4, 0.5)

    def test_bad_delta_hat_rejected(self):
        ds = build_standard_directions(2, 0.5)
        bad = DirectionSet(dims=2, m=ds.m, vectors=ds.vectors,
                           numerators=ds.numerators, delta=0.5,
                           delta_hat=0.2, lattice_denominator=2)
        with pytest.raises(ValueError):
            bad.validate()

    def test_json_roundtrip_exact(self):
        ds = build_standard_directions(3, 1 / 3)
        back = DirectionSet.from_json(ds.to_json())
        assert np.array_equal(back.numerators, ds.numerators)
        assert back.lattice_denominator == ds.lattice_denominator
        assert back.delta == ds.delta


class TestCutoffEnvelope:
    def test_zero_maps_to_zero(self):
        assert cutoff_P(np.zeros(8), 0.25) == 0.0

    def test_single_positive_entry_takes_upper_coefficient(self):
        z = np.zeros(4)
        z[2] = 0.7
        assert cutoff_P(z, 0.5) == pytest.approx(4.0 * 0.7)

    def test_matches_corner_enumeration_m2(self):
        rng = np.random.default_rng(3)
        dh = 0.25
        for _ in range(200):
            z = rng.normal(size=4) * rng.uniform(0.1, 10.0)
            assert cutoff_P(z, dh) == pytest.approx(
                brute_force_envelope(z, dh), abs=1e-12)

    def test_monotone_componentwise(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(1000, 6))
        w = z + rng.uniform(0.0, 1.0, size=z.shape)
        assert np.all(cutoff_P(w, 0.125) >= cutoff_P(z, 0.125) - 1e-12)

    def test_homogeneous_and_subadditive(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(500, 8))
        w = rng.normal(size=(500, 8))
        t = rng.uniform(0.0, 5.0, size=500)
        scale = 1.0 + np.abs(cutoff_P(z, 0.2))
        assert np.all(np.abs(cutoff_P(t[:, None] * z, 0.2)
                             - t * cutoff_P(z, 0.2)) <= 1e-12 * scale * (1 + t))
        assert np.all(cutoff_P(z + w, 0.2)
                      <= cutoff_P(z, 0.2) + cutoff_P(w, 0.2) + 1e-10)

    def test_gradient_components_sit_on_box_corners(self):
        rng = np.random.default_rng(6)
        dh = 0.25
        lo, hi = dh / 2.0, 2.0 / dh
        for _ in range(50):
            z = rng.normal(size=6)
            z[np.abs(z) < 1e-3] = 1e-3  # keep away from the kink
            grad = cutoff_P_gradient(z, dh)
            assert set(np.round(grad, 12)) <= {lo, hi}
            # finite-difference cross-check of each component
            for k in range(6):
                e = np.zeros(6)
                e[k] = 1e-7
                fd = (cutoff_P(z + e, dh) - cutoff_P(z - e, dh)) / 2e-7
                assert fd == pytest.approx(grad[k], rel=1e-6)


class TestHessianToPure:
    def test_identity_matrix_axis_component(self):
        ds = build_standard_directions(3, 0.5)
        z = hessian_to_pure(np.eye(3), ds)
        assert z[0] == pytest.approx(1.0)

    def test_zero_matrix(self):
        ds = build_standard_directions(2, 0.5)
        assert np.all(hessian_to_pure(np.zeros((2, 2)), ds) == 0.0)

    def test_mixed_entry_via_halfsum_difference(self):
        ds = build_standard_directions(2, 0.5)
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        z = hessian_to_pure(m, ds)
        # (e1+e2)/2 and (e1-e2)/2 are rows 2 and 3
        assert z[2] == pytest.approx(0.5)
        assert z[3] == pytest.approx(-0.5)
        assert z[2] - z[3] == pytest.approx(1.0)
        assert pure_to_mixed(z, ds, 0, 1) == pytest.approx(1.0)

    def test_mixed_identity_random_matrices(self):
        ds = build_standard_directions(3, 0.5)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            a = rng.normal(size=(3, 3))
            a = a + a.T
            z = hessian_to_pure(a, ds)
            for i, j in ((0, 1), (0, 2), (1, 2)):
                assert pure_to_mixed(z, ds, i, j) == pytest.approx(
                    a[i, j], abs=1e-12 * (1 + np.abs(a).max()))

    def test_nonsymmetric_rejected(self):
        ds = build_standard_directions(2, 0.5)
        with pytest.raises(ValueError):
            hessian_to_pure(np.array([[0.0, 1.0], [0.0, 0.0]]), ds)


class TestDecomposition:
    def test_identity_d3(self):
        ds = build_standard_directions(3, 0.5)
        lam, lam_lo, frob = decompose_spd(np.eye(3), ds)
        assert frob <= 1e-8
        assert lam_lo > 0.0
        assert np.array_equal(lam[:ds.m], lam[ds.m:])

    def test_reconstruction_explicit(self):
        ds = build_decomposition_directions(3, 0.5)
        rng = np.random.default_rng(12)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        a = (q * np.array([0.2, 1.0, 6.0])) @ q.T
        lam, _, frob = decompose_spd(a, ds)
        recon = np.einsum("k,kd,ke->de", lam, ds.vectors, ds.vectors)
        assert np.linalg.norm(recon - a) <= 1e-8
        assert frob <= 1e-8

    def test_lower_band_multiple_of_identity(self):
        ds = build_decomposition_directions(3, 0.5)
        lam, lam_lo, frob = decompose_spd(np.eye(3) * 0.5 / 4.0, ds)
        assert frob <= 1e-8
        assert lam_lo > 0.0

    def test_eigenvalue_outside_band_rejected(self):
        ds = build_standard_directions(3, 0.5)
        with pytest.raises(ValueError):
            decompose_spd(np.diag([0.01, 1.0, 1.0]), ds)

    def test_minimal_set_fails_beyond_dominant_cone(self):
        # strongly anisotropic band member; the minimal set cannot span it
        ds = build_standard_directions(2, 0.5)
        u = np.array([1.0, 1.3])
        u /= np.linalg.norm(u)
        a = 8.0 * np.outer(u, u) + 0.125 * (np.eye(2) - np.outer(u, u))
        with pytest.raises(DecompositionError):
            decompose_spd(a, ds)

    def test_enriched_set_handles_band_boundary(self):
        ds = build_decomposition_directions(2, 0.5)
        u = np.array([1.0, 1.3])
        u /= np.linalg.norm(u)
        a = 8.0 * np.outer(u, u) + 0.125 * (np.eye(2) - np.outer(u, u))
        lam, lam_lo, frob = decompose_spd(a, ds)
        assert frob <= 1e-8
        assert lam_lo > 0.0


def test_axis_directions_span_and_symmetry():
    ds = build_axis_directions(3, 0.5)
    assert ds.m == 3
    assert np.linalg.matrix_rank(ds.vectors) == 3
