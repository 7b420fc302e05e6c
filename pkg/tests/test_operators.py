import numpy as np
import pytest

from cutfd.directions import build_standard_directions, hessian_to_pure
from cutfd.operators import (BoundaryData, OperatorSpec, RoughField,
                             envelope_value, example_bellman, example_eq12,
                             example_nonuniqueness, example_poisson,
                             make_cutoff_operator, reference_pair_nonuniqueness,
                             slope_hull_check)
from cutfd.estimates import cutoff_domination_check, domination_check


def const_field(c):
    return lambda x: np.full(np.atleast_2d(x).shape[0], float(c))


@pytest.fixture(scope="module")
def eq12_op():
    return example_eq12(const_field(10.0), const_field(1.0), h_bar=1.0)


def eval_eq12_hessian_form(mat, gbar, f):
    """Independent oracle: the operator in raw Hessian variables."""
    lap = np.trace(mat)
    total = 3.0 * lap - f
    for i, j in ((0, 1), (1, 2), (2, 0)):
        total += min(gbar, abs(mat[i, j]))
    return total


class TestEq12:
    def test_zero_input_zero_forcing(self):
        op = example_eq12(const_field(10.0), const_field(0.0), h_bar=0.0)
        z = np.zeros(18)
        assert op.eval(0.0, np.zeros(18), z, np.zeros(3))[0] == 0.0

    def test_pure_mixed_quadratic(self, eq12_op):
        # u = x1 x2: one mixed entry 1, Laplacian 0, forcing 1
        mat = np.zeros((3, 3))
        mat[0, 1] = mat[1, 0] = 1.0
        z = hessian_to_pure(mat, eq12_op.dirs)
        out = eq12_op.eval(0.0, np.zeros(18), z, np.zeros(3))[0]
        assert out == pytest.approx(min(10.0, 1.0) + 0.0 - 1.0, abs=1e-14)

    def test_matches_hessian_form_on_random_matrices(self, eq12_op):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            mat = rng.normal(size=(3, 3)) * 3.0
            mat = mat + mat.T
            z = hessian_to_pure(mat, eq12_op.dirs)
            ours = eq12_op.eval(0.0, np.zeros(18), z, np.zeros(3))[0]
            oracle = eval_eq12_hessian_form(mat, 10.0, 1.0)
            assert ours == pytest.approx(oracle, abs=1e-12 * (1 + abs(oracle)))

    def test_negative_cap_rejected(self):
        op = example_eq12(const_field(-1.0), const_field(0.0), h_bar=0.0)
        with pytest.raises(ValueError):
            op.eval(0.0, np.zeros(18), np.zeros(18), np.zeros(3))

    def test_slope_audit_within_declared_boxes(self, eq12_op):
        report = slope_hull_check(eq12_op, samples=10_000, radius=8.0, seed=2)
        assert report.clean

    def test_value_slope_nonpositive(self, eq12_op):
        rng = np.random.default_rng(22)
        z = rng.normal(size=(100, 18))
        zp = rng.normal(size=(100, 18))
        x = rng.uniform(-1, 1, size=(100, 3))
        a = eq12_op.eval(rng.normal(size=100), zp, z, x)
        b = eq12_op.eval(rng.normal(size=100), zp, z, x)
        assert np.allclose(a, b)  # no dependence on the value coordinate


class TestBellman:
    def test_single_member_exact_linear(self):
        ds = build_standard_directions(2, 0.5)
        member = {"a": np.full(8, 0.5), "b": np.zeros(8), "c": 0.0,
                  "f": const_field(0.25)}
        op = example_bellman([member], d=2, delta=0.5, h_bar=0.3)
        z = np.arange(8.0)
        out = op.eval(0.0, np.zeros(8), z, np.zeros(2))[0]
        assert out == pytest.approx(0.5 * z.sum() + 0.25)

    def test_two_members_max_picks_larger_forcing(self):
        members = [
            {"a": np.full(8, 0.5), "f": const_field(0.0)},
            {"a": np.full(8, 0.5), "f": const_field(-1.0)},
        ]
        op = example_bellman(members, d=2, delta=0.5, h_bar=1.0)
        rng = np.random.default_rng(23)
        z = rng.normal(size=(50, 8))
        out = op.eval(np.zeros(50), np.zeros((50, 8)), z,
                      np.zeros((50, 2)))
        expected = 0.5 * z.sum(axis=1)  # f = 0 branch always wins
        assert np.allclose(out, expected)

    def test_1d_two_member_at_origin(self):
        members = [
            {"a": np.array([0.5, 0.5]), "f": const_field(-1.0)},
            {"a": np.array([1.0, 1.0]), "f": const_field(-1.0)},
        ]
        op = example_bellman(members, d=1, delta=0.5, h_bar=1.0)
        out = op.eval(0.0, np.zeros(2), np.zeros(2), np.zeros(1))[0]
        assert out == -1.0

    def test_weight_outside_box_rejected(self):
        with pytest.raises(ValueError):
            example_bellman([{"a": np.full(8, 3.0), "f": const_field(0.0)}],
                            d=2, delta=0.5, h_bar=1.0)

    def test_negative_c_rejected(self):
        with pytest.raises(ValueError):
            example_bellman([{"a": np.full(8, 0.5), "c": -1.0,
                              "f": const_field(0.0)}],
                            d=2, delta=0.5, h_bar=1.0)

    def test_isaacs_max_min(self):
        grp1 = [{"a": np.full(8, 0.5), "f": const_field(0.0)},
                {"a": np.full(8, 0.5), "f": const_field(-2.0)}]
        grp2 = [{"a": np.full(8, 0.5), "f": const_field(-1.0)}]
        op = example_bellman([grp1, grp2], d=2, delta=0.5, h_bar=2.0)
        out = op.eval(0.0, np.zeros(8), np.zeros(8), np.zeros(2))[0]
        assert out == pytest.approx(-1.0)  # max(min(0,-2), -1) = -1

    def test_value_slope_nonpositive_sampled(self):
        members = [{"a": np.full(8, 0.5), "c": 0.4, "f": const_field(0.0)}]
        op = example_bellman(members, d=2, delta=0.5, h_bar=1.0)
        rng = np.random.default_rng(24)
        for _ in range(100):
            z = rng.normal(size=8)
            zp = rng.normal(size=8)
            t0, t1 = sorted(rng.normal(size=2))
            lo = op.eval(t1, zp, z, np.zeros(2))[0]
            hi = op.eval(t0, zp, z, np.zeros(2))[0]
            assert lo <= hi + 1e-12


class TestNonuniqueness:
    def test_zero_point(self):
        op = example_nonuniqueness()
        assert op.eval(0.0, np.zeros(2), np.zeros(2), np.zeros(1))[0] == 0.0

    def test_cusp_annihilates_continuum_form(self):
        # u = 1 - |x|^3: u'' = -6|x|, sqrt(12 |u'|) = 6|x| away from 0
        op = example_nonuniqueness()
        for x in (0.3, -0.55, 0.9):
            upp = -6.0 * abs(x)
            up = -3.0 * x * abs(x)
            out = op.eval(0.0, np.array([up, -up]),
                          np.array([upp, upp]), np.array([x]))[0]
            assert out == pytest.approx(0.0, abs=1e-12)

    def test_mollified_variant_is_smaller_near_zero(self):
        raw = example_nonuniqueness()
        mol = example_nonuniqueness(mollify_eps=1e-3)
        zp = np.array([1e-7, 0.0])
        r = raw.eval(0.0, zp, np.zeros(2), np.zeros(1))[0]
        m = mol.eval(0.0, zp, np.zeros(2), np.zeros(1))[0]
        assert m < r

    def test_reference_pair_values(self):
        refs = reference_pair_nonuniqueness()
        x = np.array([[0.5], [-0.5], [1.0]])
        assert np.allclose(refs["zero"](x), 0.0)
        assert np.allclose(refs["one_minus_abs_cubed"](x),
                           [0.875, 0.875, 0.0])


class TestCutoffComposite:
    def test_constant_operator_max_semantics(self):
        ds = build_standard_directions(2, 0.5)

        def ev(z0, zp, zpp, x):
            return np.full(np.atleast_1d(z0).shape[0], -1.0)

        h = OperatorSpec(name="const", dims=2, dirs=ds, eval_fn=ev,
                         delta=0.5, K0=0.0, H_bar=1.0,
                         z2_lo=0.5, z2_hi=0.5, b_abs=0.0, c_max=0.0)
        hk0 = make_cutoff_operator(h, 0.0)
        hk1 = make_cutoff_operator(h, 1.0)
        z = np.zeros(8)
        # envelope of zero is zero, so max(-1, 0 - K)
        assert hk0.eval(0.0, np.zeros(8), z, np.zeros(2))[0] == 0.0
        assert hk1.eval(0.0, np.zeros(8), z, np.zeros(2))[0] == -1.0

    def test_envelope_branch_dominates_large_curvature(self, eq12_op):
        opk = make_cutoff_operator(eq12_op, 5.0)
        z = np.full(18, 50.0)
        out = opk.eval(0.0, np.zeros(18), z, np.zeros(3))[0]
        assert out == pytest.approx(envelope_value(eq12_op, z)[0] - 5.0)

    def test_pointwise_max_properties(self, eq12_op):
        opk = make_cutoff_operator(eq12_op, 2.0)
        rng = np.random.default_rng(25)
        z0 = rng.normal(size=200)
        zp = rng.normal(size=(200, 18))
        zpp = rng.normal(size=(200, 18)) * 3
        x = rng.uniform(-0.9, 0.9, size=(200, 3))
        base = eq12_op.eval(z0, zp, zpp, x)
        penv = envelope_value(eq12_op, zpp) - 2.0
        comp = opk.eval(z0, zp, zpp, x)
        assert np.all(comp >= base - 1e-12)
        assert np.all(comp >= penv - 1e-12)
        inactive = penv < base
        assert np.allclose(comp[inactive], base[inactive])

    def test_negative_K_rejected(self, eq12_op):
        with pytest.raises(ValueError):
            make_cutoff_operator(eq12_op, -1.0)

    def test_boxes_widened_to_envelope_hull(self, eq12_op):
        opk = make_cutoff_operator(eq12_op, 1.0)
        assert np.all(opk.z2_lo == np.minimum(eq12_op.z2_lo,
                                              eq12_op.delta / 2.0))
        assert np.all(opk.z2_hi == np.maximum(eq12_op.z2_hi,
                                              2.0 / eq12_op.delta))
        assert opk.K0 == eq12_op.K0
        assert opk.H_bar == eq12_op.H_bar

    def test_composite_branchwise_domination(self, eq12_op):
        opk = make_cutoff_operator(eq12_op, 2.0)
        rep = cutoff_domination_check(opk, samples=10_000, seed=4)
        assert rep["violations"] == 0


class TestEnvelopeDomination:
    def test_eq12(self, eq12_op):
        rep = domination_check(eq12_op, samples=10_000, seed=5)
        assert rep["violations"] == 0

    def test_poisson(self):
        op = example_poisson(const_field(1.0), d=2)
        rep = domination_check(op, samples=10_000, seed=6)
        assert rep["violations"] == 0

    def test_bellman(self):
        members = [{"a": np.full(8, 0.5), "b": np.full(8, 0.1),
                    "c": 0.2, "f": const_field(-1.0)},
                   {"a": np.full(8, 1.5), "f": const_field(0.5)}]
        op = example_bellman(members, d=2, delta=0.5, h_bar=1.0)
        rep = domination_check(op, samples=10_000, seed=7)
        assert rep["violations"] == 0

    def test_nonuniqueness_tight_but_clean(self):
        rep = domination_check(example_nonuniqueness(), samples=10_000,
                               seed=8)
        assert rep["violations"] == 0


class TestSlopeAudits:
    def test_envelope_operator_exact_box(self):
        ds = build_standard_directions(2, 0.5)
        dh = ds.delta_hat

        def ev(z0, zp, zpp, x):
            hi, lo = 2.0 / dh, dh / 2.0
            return (hi * np.maximum(zpp, 0.0)
                    - lo * np.maximum(-zpp, 0.0)).sum(axis=-1)

        op = OperatorSpec(name="envelope", dims=2, dirs=ds, eval_fn=ev,
                          delta=ds.delta, K0=0.0, H_bar=0.0,
                          z2_lo=dh / 2.0, z2_hi=2.0 / dh, b_abs=0.0,
                          c_max=0.0)
        rep = slope_hull_check(op, samples=10_000, seed=9)
        assert rep.clean

    def test_hidden_slope_detected(self):
        ds = build_standard_directions(2, 0.5)

        def ev(z0, zp, zpp, x):
            return (2.0 / ds.delta) * zpp[..., 0]  # slope 4 vs declared <= 2

        op = OperatorSpec(name="broken", dims=2, dirs=ds, eval_fn=ev,
                          delta=ds.delta, K0=0.0, H_bar=0.0,
                          z2_lo=ds.delta, z2_hi=1.0 / ds.delta, b_abs=0.0,
                          c_max=0.0)
        rep = slope_hull_check(op, samples=2_000, seed=10)
        assert rep.violations > 0

    def test_linear_inside_box_clean(self):
        ds = build_standard_directions(2, 0.5)

        def ev(z0, zp, zpp, x):
            return zpp.sum(axis=-1) - 0.5 * z0

        op = OperatorSpec(name="linear", dims=2, dirs=ds, eval_fn=ev,
                          delta=0.5, K0=0.0, H_bar=0.0,
                          z2_lo=1.0, z2_hi=1.0, b_abs=0.0, c_max=0.5)
        rep = slope_hull_check(op, samples=5_000, seed=11)
        assert rep.clean


class TestRoughField:
    def test_deterministic_and_bounded(self):
        f1 = RoughField(99, 0.25, [-1, -1], [1, 1], 0.0, 10.0)
        f2 = RoughField(99, 0.25, [-1, -1], [1, 1], 0.0, 10.0)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, size=(50, 2))
        assert np.array_equal(f1(pts), f2(pts))
        assert np.all((f1(pts) >= 0.0) & (f1(pts) <= 10.0))

    def test_constant_within_cell(self):
        f = RoughField(5, 0.5, [0, 0], [2, 2], 0.0, 1.0)
        base = np.array([[0.3, 0.3]])
        probe = base + np.array([[0.1, -0.05]])
        assert f(base)[0] == f(probe)[0]

    def test_varies_across_cells(self):
        f = RoughField(5, 0.5, [0, 0], [4, 4], 0.0, 1.0)
        pts = np.array([[0.25 + 0.5 * k, 0.25] for k in range(8)])
        assert np.unique(f(pts)).size > 1


def test_boundary_data_constant():
    g = BoundaryData.constant(2.5)
    assert np.allclose(g.sample(np.zeros((3, 2))), 2.5)
    assert g.norm_c == 2.5
