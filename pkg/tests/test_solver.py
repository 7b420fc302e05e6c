import numpy as np
import pytest

from cutfd import _kernels
from cutfd.lattice import DomainSpec, build_discrete_domain
from cutfd.operators import (BoundaryData, example_poisson,
                             make_cutoff_operator)
from cutfd.harness import demo_bellman_config, demo_eq12_config
from cutfd.solver import (SolverError, build_psi0, comparison_check,
                          residual_field, residual_norms, solve,
                          transformed_apply)


def const_field(c):
    return lambda x: np.full(np.atleast_2d(x).shape[0], float(c))


@pytest.fixture(scope="module")
def disc_poisson():
    """Unit disc with the quadratic exact solution 1 - |x|^2."""
    op = example_poisson(const_field(-4.0), d=2)
    dom = DomainSpec.ball([0.0, 0.0], 1.0)
    dd = build_discrete_domain(dom, 0.1, op.dirs)

    def exact(x):
        x = np.atleast_2d(x)
        return 1.0 - (x ** 2).sum(axis=1)

    g = BoundaryData(g=exact, norm_c=1.0, norm_c11=5.0)
    return op, dd, g, exact


class TestPsiBarrier:
    def test_barrier_inequality_holds_with_margin(self, disc_poisson):
        op, dd, _, _ = disc_poisson
        psi = build_psi0(dd, op)
        assert psi.margin <= -1.0
        assert np.all(psi.values >= 1.0)

    def test_affine_profile_fails_the_inequality(self, disc_poisson):
        # negative control: second differences of an affine function vanish,
        # so the corner functional is a sum of magnitudes, never <= -1
        op, dd, _, _ = disc_poisson
        psi = build_psi0(dd, op)
        slope = np.array([0.7, -0.2])
        dpsi_affine = np.tile(dd.dirs.vectors @ slope,
                              (dd.n_interior, 1))
        d2_affine = np.zeros_like(dpsi_affine)
        corner = np.maximum(psi.delta1 * d2_affine,
                            d2_affine / psi.delta1).sum(axis=1)
        worst = (corner + np.abs(dpsi_affine).sum(axis=1) / psi.delta1).max()
        assert worst > -1.0

    def test_mesh_too_coarse_raises(self):
        op = example_poisson(const_field(0.0), d=2, delta=0.02)
        dom = DomainSpec.ball([0.0, 0.0], 1.0)
        dd = build_discrete_domain(dom, 0.45, op.dirs)
        with pytest.raises(Exception):
            build_psi0(dd, op)

    def test_transform_identity_small(self):
        cfg = demo_bellman_config()
        dom = DomainSpec.ball([0.0, 0.0], 1.0)
        dd = build_discrete_domain(dom, 0.2, cfg.operator.dirs)
        psi = build_psi0(dd, cfg.operator)
        rng = np.random.default_rng(31)
        for _ in range(5):
            u = rng.uniform(-1.0, 1.0, dd.n_nodes) / psi.values
            lhs = transformed_apply(cfg.operator, dd, psi, u)
            rhs = residual_field(cfg.operator, dd, u * psi.values,
                                 backend="numpy")
            assert np.max(np.abs(lhs - rhs)) <= 1e-11


class TestSolve:
    def test_quadratic_exact_on_disc(self, disc_poisson):
        op, dd, g, exact = disc_poisson
        rep = solve(op, dd, g, tol=1e-10)
        err = np.abs(rep.solution.values - exact(dd.coords)).max()
        assert err <= 1e-8
        assert rep.converged
        assert rep.final_residual <= 1e-10

    def test_constants_are_harmonic(self):
        op = example_poisson(const_field(0.0), d=2)
        dom = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
        dd = build_discrete_domain(dom, 1 / 8, op.dirs)
        g = BoundaryData.constant(3.25)
        rep = solve(op, dd, g, tol=1e-12)
        assert np.abs(rep.solution.values - 3.25).max() <= 1e-10
        assert rep.iterations == 0

    def test_residual_trace_non_increasing(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep = solve(op, dd, g, tol=1e-10)
        trace = rep.residual_trace
        assert np.all(trace[1:] <= trace[:-1] * (1.0 + 1e-9) + 1e-13)

    def test_fixed_point_independent_of_initialization(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rng = np.random.default_rng(32)
        sols = []
        for _ in range(3):
            init = g.sample(dd.coords)
            init[dd.interior_ids] += rng.uniform(-0.5, 0.5, dd.n_interior)
            rep = solve(op, dd, g, tol=1e-9, initial=init)
            sols.append(rep.solution.values)
        for v in sols[1:]:
            assert np.abs(v - sols[0]).max() <= 10e-9

    def test_deterministic_rerun_bit_identical(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep1 = solve(op, dd, g, tol=1e-9)
        rep2 = solve(op, dd, g, tol=1e-9)
        assert np.array_equal(rep1.solution.values, rep2.solution.values)
        assert rep1.iterations == rep2.iterations

    def test_max_iters_raises_with_report(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        with pytest.raises(SolverError) as err:
            solve(op, dd, g, tol=1e-14, max_iters=5)
        assert err.value.report is not None
        assert err.value.report.residual_trace.size > 0

    def test_bad_tolerance_rejected(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        with pytest.raises(ValueError):
            solve(op, dd, g, tol=0.0)

    def test_backends_agree(self):
        cfg = demo_eq12_config()
        opk = make_cutoff_operator(cfg.operator, 4.0)
        dd = build_discrete_domain(cfg.domain, 1 / 5, cfg.operator.dirs)
        psi = build_psi0(dd, opk)
        tau = 0.9 / opk.lipschitz_bound(dd.h)
        step = tau * psi.values[dd.interior_ids] / psi.values.max()
        payload = opk.bind(dd)
        v = cfg.g.sample(dd.coords)
        out_np = v.copy()
        out_nb = v.copy()
        res_np = _kernels.sweep(payload, v, out_np, step, backend="numpy")
        if _kernels.NUMBA_ENABLED:
            res_nb = _kernels.sweep(payload, v, out_nb, step,
                                    backend="numba")
            assert res_nb == pytest.approx(res_np, rel=1e-13)
            assert np.max(np.abs(out_nb - out_np)) <= 1e-12 * (
                1.0 + np.abs(out_np).max())
        rf_np = _kernels.residual_field(payload, v, backend="numpy")
        assert res_np == pytest.approx(float(np.max(np.abs(rf_np))))

    def test_sup_bound_ratio_reported(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep = solve(op, dd, g, tol=1e-9)
        chk = rep.sup_bound_check
        assert chk["sup_v"] <= chk["ratio"] * (op.H_bar + chk["sup_g"]) + 1e-12


class TestResidual:
    def test_boundary_values_forcing_one(self):
        # v = g = 0 with unit forcing leaves residual identically -1
        op = example_poisson(const_field(1.0), d=2)
        dom = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
        dd = build_discrete_domain(dom, 1 / 8, op.dirs)
        res = residual_field(op, dd, np.zeros(dd.n_nodes), backend="numpy")
        assert np.allclose(res, -1.0)

    def test_norms_volume_weighting(self):
        op = example_poisson(const_field(1.0), d=2)
        dom = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
        dd = build_discrete_domain(dom, 1 / 8, op.dirs)
        res = residual_field(op, dd, np.zeros(dd.n_nodes), backend="numpy")
        norms = residual_norms(dd, res, p_list=(2,))
        assert norms["sup"] == 1.0
        vol = dd.spacing ** 2 * dd.n_interior
        assert norms["l2"] == pytest.approx(vol ** 0.5)

    def test_solved_instance_residual_within_tol(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep = solve(op, dd, g, tol=1e-9)
        res = residual_field(op, dd, rep.solution.values, backend="numpy")
        assert np.abs(res).max() <= 1e-9 * (1 + 1e-9)


class TestComparison:
    def test_equal_functions_all_hold(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        v = g.sample(dd.coords)
        out = comparison_check(op, dd, v, v, slack=1e-12)
        assert out["premises_hold"] and out["conclusion_holds"]
        assert out["consistent"]

    def test_barrier_shifted_subsolution(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep = solve(op, dd, g, tol=1e-10)
        v = rep.solution.values
        psi = build_psi0(dd, op)
        u = v - 1e-3 * psi.values
        out = comparison_check(op, dd, u, v, slack=1e-12)
        assert out["premises_hold"]
        assert out["conclusion_holds"]

    def test_interior_bump_premises_fail(self, disc_poisson):
        op, dd, g, _ = disc_poisson
        rep = solve(op, dd, g, tol=1e-10)
        v = rep.solution.values
        u = v.copy()
        u[dd.interior_ids[dd.n_interior // 2]] += 0.5
        out = comparison_check(op, dd, u, v, slack=1e-12)
        assert not out["premises_hold"]
        assert out["consistent"]  # no claim without premises
