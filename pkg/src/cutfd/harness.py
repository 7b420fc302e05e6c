"""Study orchestration: canned demos, cut-off level sweeps, refinement
studies, and CSV/JSON emission.

All physical parameters live in the study configuration (TOML or the
canned builders); nothing is hard-coded in the numeric modules.  Rows are
keyed by (h, K) and rerunning a config with the same seed reproduces every
column except the wall-clock one bit for bit.
"""

from dataclasses import dataclass, field
import json
import sys
import time

import numpy as np

from . import _kernels
from .lattice import DomainSpec, build_discrete_domain
from .operators import (BoundaryData, RoughField, example_bellman,
                        example_eq12, example_nonuniqueness, example_poisson,
                        make_cutoff_operator, reference_pair_nonuniqueness)
from .solver import SolverError, residual_field, residual_norms, solve
from .estimates import estimate_report

RESULT_COLUMNS = ["h", "K", "iters", "sup_v", "boundary_ratio", "wsd_max",
                  "res_norm", "cutoff_defect", "wall_ms", "status"]


@dataclass
class StudyConfig:
    """Everything a study run needs, resolved to concrete objects."""

    name: str
    operator: object
    domain: DomainSpec
    g: BoundaryData
    h_schedule: list
    k_schedule: list
    tol: float = 1e-8
    max_iters: int = 1_000_000
    seed: int = 0
    h_for_k_sweep: float = None
    k_for_h_refinement: float = None
    exact: object = None

    def validate(self):
        if not self.h_schedule or not self.k_schedule:
            raise ValueError("h and K schedules must be nonempty")
        if any(h2 >= h1 for h1, h2 in zip(self.h_schedule,
                                          self.h_schedule[1:])):
            raise ValueError("h schedule must be strictly decreasing")
        if any(k2 <= k1 for k1, k2 in zip(self.k_schedule,
                                          self.k_schedule[1:])):
            raise ValueError("K schedule must be strictly increasing")
        mu = self.domain.inradius_sup()
        if any(h >= mu for h in self.h_schedule):
            raise ValueError("every h must stay below the domain inradius")
        return self


@dataclass
class StudyResult:
    name: str
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        write_results_csv(self.rows, path)

    def column(self, key):
        return [row.get(key) for row in self.rows]


def write_results_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in RESULT_COLUMNS:
                val = row.get(col, "")
                if isinstance(val, float):
                    cells.append(f"{val:.17g}")
                else:
                    cells.append(str(val))
            fh.write(",".join(cells) + "\n")


def _solve_cell(cfg, dd, K, initial=None):
    """One (h, K) solve plus its measurement row."""
    op = cfg.operator if K is None else make_cutoff_operator(cfg.operator, K)
    t0 = time.perf_counter()
    row = {"h": dd.h, "K": K if K is not None else float("inf")}
    try:
        rep = solve(op, dd, cfg.g, tol=cfg.tol, max_iters=cfg.max_iters,
                    initial=initial)
    except SolverError as err:
        row.update({"status": f"failed: {err}", "iters": cfg.max_iters,
                    "wall_ms": (time.perf_counter() - t0) * 1e3})
        return row, None
    v = rep.solution.values
    res_base = residual_field(cfg.operator, dd, v)
    norms = residual_norms(dd, res_base, p_list=(cfg.operator.dims,))
    est = estimate_report(v, op, dd, cfg.g, cfg.tol)
    row.update({
        "iters": rep.iterations,
        "sup_v": float(np.max(np.abs(v))),
        "boundary_ratio": est.boundary_ratio,
        "wsd_max": est.wsd_max,
        "res_norm": norms[f"l{cfg.operator.dims}"],
        "cutoff_defect": est.cutoff_identity_defect,
        "wall_ms": (time.perf_counter() - t0) * 1e3,
        "status": "ok",
    })
    return row, (rep, est)


def run_k_sweep(cfg, h=None, measure_uncut=True):
    """Solve the cut-off problem across the K schedule at one mesh size.

    Records the base-operator residual norm of each solution (the sweep
    observable), pairwise sup distances between consecutive solutions, and
    the measured envelope sup of the uncut solution for the saturation
    check.
    """
    cfg.validate()
    h = h or cfg.h_for_k_sweep or cfg.h_schedule[len(cfg.h_schedule) // 2]
    dd = build_discrete_domain(cfg.domain, h, cfg.operator.dirs)
    result = StudyResult(name=f"{cfg.name}:k-sweep")
    solutions = []
    for K in cfg.k_schedule:
        row, payload = _solve_cell(cfg, dd, K)
        result.rows.append(row)
        solutions.append(payload[0].solution.values if payload else None)
    dists = []
    for va, vb in zip(solutions, solutions[1:]):
        dists.append(float(np.max(np.abs(va - vb)))
                     if va is not None and vb is not None else None)
    result.extra["consecutive_sup_distance"] = dists
    result.extra["res_norm_trace"] = result.column("res_norm")
    if measure_uncut:
        row, payload = _solve_cell(cfg, dd, None)
        if payload is not None:
            from .operators import envelope_value
            from .lattice import all_pair_second_differences
            pair = all_pair_second_differences(dd, payload[0].solution.values)
            zpp = np.concatenate([pair, pair], axis=1)
            result.extra["uncut_p_sup"] = float(
                envelope_value(cfg.operator, zpp).max())
            result.extra["uncut_solution"] = payload[0].solution.values
        result.extra["uncut_row"] = row
    result.extra["solutions"] = solutions
    result.extra["dd"] = dd
    return result


def common_node_distance(dd_a, v_a, dd_b, v_b):
    """Sup distance over nodes shared by two lattices of the same domain."""
    pts = dd_a.coords
    idx = np.rint((pts - dd_b.origin) / dd_b.spacing).astype(np.int64)
    back = dd_b.origin + idx * dd_b.spacing
    aligned = np.max(np.abs(back - pts), axis=1) <= 1e-9 * (1.0 + dd_b.h)
    in_range = np.all((idx >= 0) & (idx < np.asarray(dd_b.grid_shape)), axis=1)
    ok = aligned & in_range
    flat = np.ravel_multi_index(tuple(idx[ok].T), dd_b.grid_shape)
    ids = dd_b.grid_id.reshape(-1)[flat]
    sel = ids >= 0
    if not sel.any():
        return None
    return float(np.max(np.abs(v_a[np.flatnonzero(ok)[sel]] - v_b[ids[sel]])))


def run_h_refinement(cfg, K=None):
    """Solve across the h schedule at a fixed cut-off level.

    Reports every measurement row plus the sup distance between successive
    solutions restricted to their common lattice points, and the error
    against ``cfg.exact`` when the study carries a known solution.
    """
    cfg.validate()
    K = K if K is not None else cfg.k_for_h_refinement
    result = StudyResult(name=f"{cfg.name}:h-refinement")
    solved = []
    for h in cfg.h_schedule:
        dd = build_discrete_domain(cfg.domain, h, cfg.operator.dirs)
        row, payload = _solve_cell(cfg, dd, K)
        result.rows.append(row)
        if payload is None:
            solved.append(None)
            continue
        rep, est = payload
        solved.append((dd, rep.solution.values, est))
        if cfg.exact is not None:
            ids = dd.interior_ids
            err = np.abs(rep.solution.values[ids]
                         - cfg.exact(dd.coords[ids]))
            row["exact_error"] = float(err.max())
    dists = []
    for a, b in zip(solved, solved[1:]):
        dists.append(common_node_distance(a[0], a[1], b[0], b[1])
                     if a is not None and b is not None else None)
    result.extra["successive_sup_distance"] = dists
    result.extra["solved"] = solved
    if cfg.exact is not None:
        errs = [row.get("exact_error") for row in result.rows]
        result.extra["exact_errors"] = errs
        result.extra["error_ratios"] = [
            a / b if (a and b) else None for a, b in zip(errs, errs[1:])]
    return result


# ---------------------------------------------------------------------------
# canned demos
# ---------------------------------------------------------------------------

def demo_poisson_config():
    """Separable exact solution on the unit square, axis Laplacian."""
    def exact(x):
        x = np.atleast_2d(x)
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def f(x):
        return -2.0 * np.pi ** 2 * exact(x)

    op = example_poisson(f, d=2)
    dom = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
    g = BoundaryData(g=exact, norm_c=1.0,
                     norm_c11=1.0 + np.pi + np.pi ** 2)
    return StudyConfig(name="poisson", operator=op, domain=dom, g=g,
                       h_schedule=[1 / 16, 1 / 32, 1 / 64],
                       k_schedule=[1e6], tol=1e-10, exact=exact)


def _polar_ramp(amplitude, width):
    """Two one-sided quadratic caps at the poles; C^{1,1} on all of R^3."""
    edge = 1.0 - width

    def g(x):
        x = np.atleast_2d(x)
        up = np.maximum(x[:, 2] - edge, 0.0)
        dn = np.maximum(-x[:, 2] - edge, 0.0)
        return amplitude * (up ** 2 + dn ** 2)

    norm_c = amplitude * width ** 2
    norm_c11 = norm_c + 2.0 * amplitude * width + 2.0 * amplitude
    return BoundaryData(g=g, norm_c=norm_c, norm_c11=norm_c11)


def demo_eq12_config(seed=20240811, gbar_max=10.0, ramp_amplitude=0.8,
                     ramp_width=0.6, f_const=0.2, f_slope=0.1,
                     rough_cell=1.0 / 16.0, tol=1e-8):
    """Unit-ball instance of the rough mixed-cap operator.

    The cap field is piecewise constant on cells of a fixed size, so the
    same rough data is shared by every mesh in the schedule; the boundary
    data carries convex polar caps whose curvature the small cut-off
    levels must chop, which is what populates the active set.
    """
    gbar = RoughField(seed, rough_cell, lo=[-1.25] * 3, hi=[1.25] * 3,
                      vmin=0.0, vmax=gbar_max)

    def f(x):
        x = np.atleast_2d(x)
        return f_const + f_slope * x[:, 0]

    op = example_eq12(gbar, f, h_bar=f_const + f_slope * 1.25)
    dom = DomainSpec.ball([0.0, 0.0, 0.0], 1.0)
    g = _polar_ramp(ramp_amplitude, ramp_width)
    return StudyConfig(name="eq12", operator=op, domain=dom, g=g,
                       h_schedule=[1 / 8, 1 / 12, 1 / 16],
                       k_schedule=[1, 2, 4, 8, 16, 32, 64, 128, 256],
                       tol=tol, seed=seed, h_for_k_sweep=1 / 12,
                       k_for_h_refinement=8)


def demo_bellman_config():
    """Two-member max of linear operators on the unit square."""
    delta = 0.5

    def f1(x):
        return np.full(np.atleast_2d(x).shape[0], -1.0)

    def f2(x):
        return -np.atleast_2d(x)[:, 0]

    members = [
        {"a": np.array([1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.5, 0.5]),
         "b": np.array([0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
         "c": 0.0, "f": f1},
        {"a": np.array([1.3, 0.7, 0.5, 0.5, 1.3, 0.7, 0.5, 0.5]),
         "b": np.array([0.0, -0.15, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
         "c": 0.3, "f": f2},
    ]
    op = example_bellman(members, d=2, delta=delta, h_bar=1.0)
    dom = DomainSpec.box([0.0, 0.0], [1.0, 1.0])
    g = BoundaryData.constant(0.0)
    return StudyConfig(name="bellman", operator=op, domain=dom, g=g,
                       h_schedule=[1 / 8, 1 / 16], k_schedule=[4, 16, 64],
                       tol=1e-8)


def demo_nonuniqueness_result(h_schedule=(1 / 40, 1 / 80, 1 / 160)):
    """Residual decay table for the two candidate solutions on (-1, 1)."""
    op = example_nonuniqueness()
    dom = DomainSpec.box([-1.0], [1.0])
    refs = reference_pair_nonuniqueness()
    result = StudyResult(name="nonuniqueness:residuals")
    for h in h_schedule:
        dd = build_discrete_domain(dom, h, op.dirs)
        row = {"h": h, "K": float("inf"), "status": "ok", "wall_ms": 0.0}
        for name, fn in refs.items():
            vals = fn(dd.coords)
            res = residual_field(op, dd, vals, backend="numpy")
            row[f"sup_residual_{name}"] = float(np.max(np.abs(res)))
        result.rows.append(row)
    for name in refs:
        sups = [row[f"sup_residual_{name}"] for row in result.rows]
        result.extra[f"ratios_{name}"] = [
            a / b if b > 0 else float("inf") for a, b in zip(sups, sups[1:])]
        result.extra[f"sups_{name}"] = sups
    return result


def run_demo(name, out_dir=None, stream=None):
    """Run one canned study end to end and print a short table."""
    stream = stream or sys.stdout
    if name == "poisson":
        cfg = demo_poisson_config()
        result = run_h_refinement(cfg, K=cfg.k_schedule[0])
        ratios = result.extra.get("error_ratios")
        stream.write(f"poisson refinement, error ratios per halving: "
                     f"{ratios}\n")
    elif name == "eq12":
        cfg = demo_eq12_config()
        result = run_k_sweep(cfg)
        stream.write("eq12 cut-off sweep at h=%g, base residual norms:\n"
                     % (cfg.h_for_k_sweep,))
        for row in result.rows:
            stream.write(f"  K={row['K']:<6g} res_norm={row['res_norm']:.3e} "
                         f"defect={row['cutoff_defect']:.3e} "
                         f"iters={row['iters']}\n")
        stream.write(f"uncut envelope sup: "
                     f"{result.extra.get('uncut_p_sup'):.3f}\n")
    elif name == "bellman":
        cfg = demo_bellman_config()
        result = run_h_refinement(cfg, K=cfg.k_schedule[-1])
        stream.write("bellman refinement rows:\n")
        for row in result.rows:
            stream.write(f"  h={row['h']:.4f} sup_v={row['sup_v']:.5f} "
                         f"iters={row['iters']}\n")
    elif name == "nonuniqueness":
        result = demo_nonuniqueness_result()
        stream.write("nonuniqueness residual sups (both candidates):\n")
        for row in result.rows:
            stream.write(
                f"  h={row['h']:.5f} "
                f"zero={row['sup_residual_zero']:.3e} "
                f"cusp={row['sup_residual_one_minus_abs_cubed']:.3e}\n")
    else:
        raise ValueError(f"unknown demo '{name}' (choose from poisson, eq12, "
                         "bellman, nonuniqueness)")
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        result.to_csv(os.path.join(out_dir, "results.csv"))
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump({"name": result.name,
                       "extra": _jsonable(result.extra)}, fh, indent=2)
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()
                if k not in ("solutions", "solved", "dd", "uncut_solution")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def load_config(path):
    """Build a StudyConfig from a TOML file.

    The operator table selects one of the built-in kinds and its numeric
    parameters; domains are balls or boxes.  See configs/ for examples.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # python 3.10
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)

    op_tab = raw.get("operator", {})
    kind = op_tab.get("kind", "poisson")
    study = raw.get("study", {})

    if kind == "eq12":
        cfg = demo_eq12_config(
            seed=op_tab.get("seed", 20240811),
            gbar_max=op_tab.get("gbar_max", 10.0),
            ramp_amplitude=op_tab.get("ramp_amplitude", 0.8),
            ramp_width=op_tab.get("ramp_width", 0.6),
            f_const=op_tab.get("f_const", 0.2),
            f_slope=op_tab.get("f_slope", 0.1),
            rough_cell=op_tab.get("rough_cell", 1.0 / 16.0))
        if "gbar_csv" in op_tab:
            # swap in the CSV-backed cap field, keeping f and the bound
            gbar = RoughField.from_csv(op_tab["gbar_csv"],
                                       op_tab.get("rough_cell", 1.0 / 16.0),
                                       [-1.25] * 3, [1.25] * 3)
            f_const = op_tab.get("f_const", 0.2)
            f_slope = op_tab.get("f_slope", 0.1)
            cfg.operator = example_eq12(
                gbar,
                lambda x: f_const + f_slope * np.atleast_2d(x)[:, 0],
                h_bar=f_const + f_slope * 1.25)
    elif kind == "poisson":
        cfg = demo_poisson_config()
    elif kind == "bellman":
        cfg = demo_bellman_config()
    elif kind == "nonuniqueness":
        cfg = StudyConfig(name="nonuniqueness",
                          operator=example_nonuniqueness(),
                          domain=DomainSpec.box([-1.0], [1.0]),
                          g=BoundaryData.constant(0.0),
                          h_schedule=study.get("h", [1 / 40, 1 / 80, 1 / 160]),
                          k_schedule=study.get("K", [1e6]))
    else:
        raise ValueError(f"unknown operator kind '{kind}'")

    dom_tab = raw.get("domain", {})
    if dom_tab:
        shape = dom_tab.get("shape", "ball")
        if shape == "ball":
            cfg.domain = DomainSpec.ball(dom_tab["center"], dom_tab["radius"])
        elif shape == "box":
            cfg.domain = DomainSpec.box(dom_tab["lo"], dom_tab["hi"])
        else:
            raise ValueError(f"unknown domain shape '{shape}'")
    if "h" in study:
        cfg.h_schedule = list(study["h"])
    if "K" in study:
        cfg.k_schedule = list(study["K"])
    cfg.tol = study.get("tol", cfg.tol)
    cfg.max_iters = study.get("max_iters", cfg.max_iters)
    if "h_for_k_sweep" in study:
        cfg.h_for_k_sweep = study["h_for_k_sweep"]
    if "k_for_h_refinement" in study:
        cfg.k_for_h_refinement = study["k_for_h_refinement"]
    return cfg.validate()


# ---------------------------------------------------------------------------
# backend benchmark
# ---------------------------------------------------------------------------

def run_benchmark(h=1 / 10, sweeps=200, kind="eq12", stream=None):
    """Time identical sweeps on the jit and numpy backends.

    Returns per-backend node updates per second and the sup difference of
    the final buffers, which should sit at rounding level.
    """
    stream = stream or sys.stdout
    if kind == "eq12":
        cfg = demo_eq12_config()
    elif kind == "poisson":
        cfg = demo_poisson_config()
    else:
        raise ValueError("benchmark kinds: eq12, poisson")
    op = make_cutoff_operator(cfg.operator, 8.0) if kind == "eq12" \
        else cfg.operator
    dd = build_discrete_domain(cfg.domain, h, op.dirs)
    from .solver import build_psi0
    psi = build_psi0(dd, op)
    tau = 0.9 / op.lipschitz_bound(dd.h)
    step = tau * psi.values[dd.interior_ids] / psi.values.max()
    payload = op.bind(dd)
    out = {"nodes": dd.n_interior, "sweeps": sweeps, "h": h, "kind": kind}

    def time_backend(backend):
        v = cfg.g.sample(dd.coords)
        buf = v.copy()
        _kernels.sweep(payload, v, buf, step, backend=backend)  # warm up
        v = cfg.g.sample(dd.coords)
        buf = v.copy()
        t0 = time.perf_counter()
        for _ in range(sweeps):
            _kernels.sweep(payload, v, buf, step, backend=backend)
            v, buf = buf, v
        dt = time.perf_counter() - t0
        return v, dt

    v_np, t_np = time_backend("numpy")
    out["numpy_updates_per_s"] = dd.n_interior * sweeps / t_np
    if _kernels.NUMBA_ENABLED:
        v_nb, t_nb = time_backend("numba")
        out["numba_updates_per_s"] = dd.n_interior * sweeps / t_nb
        out["speedup"] = t_np / t_nb
        out["max_backend_diff"] = float(np.max(np.abs(v_nb - v_np)))
    else:
        out["numba_updates_per_s"] = None
        out["speedup"] = None
        out["max_backend_diff"] = None
    stream.write(json.dumps(out, indent=2) + "\n")
    return out
