"""Operators in pure-directional form, with declared coefficient boxes.

An operator is a function ``H(z, x)`` of ``z = (z'_0, z'_{+-1..+-m},
z''_{+-1..+-m})`` together with the boxes its secant slopes are promised
to stay in: per-entry intervals for the second-difference coordinates,
absolute bounds for the first-difference ones, and a bound on the
(nonpositive) slope in the value coordinate.  The boxes are what the
solver, the barrier constructions and the audit routines consume; nothing
downstream differentiates H.

Built-in operators read the two halves of z'' symmetrically, so their
per-entry slope boxes are half of the per-pair ones (second differences
always arrive with equal halves).
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import KIND_EQ12, KIND_LINMAX, KernelPayload


@dataclass
class BoundaryData:
    """Dirichlet data defined on all of R^d with declared norms."""

    g: object
    norm_c: float
    norm_c11: float

    def sample(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.asarray(self.g(pts), dtype=float)
        if out.shape != (pts.shape[0],):
            out = np.array([float(self.g(p)) for p in pts])
        return out

    @staticmethod
    def constant(c, dims=None):
        return BoundaryData(g=lambda x: np.full(np.atleast_2d(x).shape[0],
                                                float(c)),
                            norm_c=abs(float(c)), norm_c11=abs(float(c)))


class RoughField:
    """Seeded piecewise-constant field: one uniform draw per cube cell.

    Deliberately discontinuous at the cell faces; the cell size is fixed
    independently of any mesh so the same field is reused across
    refinement levels.
    """

    def __init__(self, seed, cell, lo, hi, vmin=0.0, vmax=1.0):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.cell = float(cell)
        self.vmin = float(vmin)
        self.vmax = float(vmax)
        self.seed = int(seed)
        shape = tuple(int(np.ceil((h - l) / cell)) + 1
                      for l, h in zip(self.lo, self.hi))
        rng = np.random.default_rng(seed)
        self.values = rng.uniform(vmin, vmax, size=shape)

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        for k, n in enumerate(self.values.shape):
            np.clip(idx[:, k], 0, n - 1, out=idx[:, k])
        return self.values[tuple(idx.T)]

    def to_csv(self, path):
        np.savetxt(path, self.values.reshape(-1), fmt="%.17g")

    @staticmethod
    def from_csv(path, cell, lo, hi):
        """Cell table from a flat CSV written by ``to_csv`` (same geometry)."""
        field = RoughField(0, cell, lo, hi)
        flat = np.loadtxt(path).reshape(-1)
        if flat.size != field.values.size:
            raise ValueError(f"CSV holds {flat.size} cells, geometry needs "
                             f"{field.values.size}")
        field.values = flat.reshape(field.values.shape)
        field.vmin = float(flat.min())
        field.vmax = float(flat.max())
        return field


@dataclass
class OperatorSpec:
    """H(z, x) plus its declared coefficient boxes.

    ``eval_fn(z0, zp, zpp, x)`` is vectorized over the leading axis; ``zp``
    and ``zpp`` have ``2m`` columns ordered like the direction set.  ``kind``
    is a kernel id for the jit path, or None for operators that only run
    through the generic vectorized path.
    """

    name: str
    dims: int
    dirs: object
    eval_fn: object
    delta: float
    K0: float
    H_bar: float
    z2_lo: np.ndarray
    z2_hi: np.ndarray
    b_abs: np.ndarray
    c_max: float
    N_prime: float = None
    omega: str = "modulus unspecified (continuity only)"
    kind: object = None
    bind_data: object = None
    cut_level: float = None
    base: object = None

    def __post_init__(self):
        two_m = 2 * self.dirs.m
        for arr_name in ("z2_lo", "z2_hi", "b_abs"):
            arr = np.asarray(getattr(self, arr_name), dtype=float)
            if arr.shape == ():
                arr = np.full(two_m, float(arr))
            if arr.shape != (two_m,):
                raise ValueError(f"{arr_name} must broadcast to 2m entries")
            object.__setattr__(self, arr_name, arr)

    # -- evaluation ---------------------------------------------------------

    def eval(self, z0, zp, zpp, x):
        z0 = np.atleast_1d(np.asarray(z0, dtype=float))
        zp = np.atleast_2d(np.asarray(zp, dtype=float))
        zpp = np.atleast_2d(np.asarray(zpp, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.eval_fn(z0, zp, zpp, x)

    def lipschitz_bound(self, h):
        """Declared-box bound on the sweep update slope at mesh h."""
        hi = self.z2_hi
        if self.cut_level is not None:
            hi = np.maximum(hi, 2.0 / self.delta)
        return float(self.c_max + np.sum(2.0 * hi / h ** 2 + self.b_abs / h))

    def monotone_mesh_ok(self, h):
        """Off-center stencil coefficients stay nonnegative at this h."""
        m = self.dirs.m
        lo = self.z2_lo
        if self.cut_level is not None:
            lo = np.minimum(lo, self.delta / 2.0)
        pair_lo = lo[:m] + lo[m:]
        return bool(np.all(pair_lo / h ** 2 - self.b_abs[:m] / h >= 0.0)
                    and np.all(pair_lo / h ** 2 - self.b_abs[m:] / h >= 0.0))

    def bind(self, dd):
        """Kernel payload with node-sampled data, or None for generic ops."""
        if self.kind is None or self.bind_data is None:
            return None
        data = self.bind_data(dd)
        cut = {}
        if self.cut_level is not None:
            m = self.dirs.m
            lo = np.full(2 * m, self.delta / 2.0)
            hi = np.full(2 * m, 2.0 / self.delta)
            cut = dict(has_cut=True, cut_k=self.cut_level,
                       plo_pair=lo[:m] + lo[m:], phi_pair=hi[:m] + hi[m:])
        return KernelPayload(self.kind, dd.nbr, dd.interior_ids, dd.h,
                             **data, **cut)

    # -- coordinate boxes for audits ----------------------------------------

    def coordinate_boxes(self):
        """(lo, hi) arrays over the full z = (z0, z', z'') coordinate list."""
        lo = np.concatenate([[-self.c_max], -self.b_abs, self.z2_lo])
        hi = np.concatenate([[0.0], self.b_abs, self.z2_hi])
        return lo, hi


def _sym_halves(zpp, m):
    return 0.5 * (zpp[:, :m] + zpp[:, m:])


# ---------------------------------------------------------------------------
# built-in operators
# ---------------------------------------------------------------------------

def example_poisson(f, d, delta=0.5):
    """sum_i D^2_{e_i} u - f(x) on the axis direction set."""
    from .directions import build_axis_directions

    dirs = build_axis_directions(d, delta)
    m = dirs.m

    def ev(z0, zp, zpp, x):
        return _sym_halves(zpp, m).sum(axis=1) - np.asarray(f(x), dtype=float)

    def bind(dd):
        fnode = np.asarray(f(dd.coords[dd.interior_ids]), dtype=float)
        return dict(apair=np.ones((1, m)),
                    bcoef=np.zeros((1, 2 * m)), czero=np.zeros(1),
                    fmem=-fnode[None, :])

    return OperatorSpec(name="poisson", dims=d, dirs=dirs, eval_fn=ev,
                        delta=delta, K0=0.0, H_bar=_sampled_sup(f, d),
                        z2_lo=0.5, z2_hi=0.5, b_abs=0.0, c_max=0.0,
                        kind=KIND_LINMAX, bind_data=bind)


def example_eq12(gbar, f, delta=1.0 / 3.0, h_bar=None):
    """Three-dimensional model operator with rough mixed-derivative caps.

    ``sum_pairs [gbar(x) ^ |D_ij u|] + 3 Lap(u) - f(x)`` rewritten along
    the standard direction set: each mixed derivative is the difference of
    the two half-sum second differences, and the Laplacian part is the
    axis sum plus twice the half-sum total.  Per-entry slope boxes are
    [1/2, 3/2] on the twelve half-sum entries and exactly 1/2 on the six
    axis entries; with symmetric halves that is the familiar [1, 3] and
    [1, 1] per direction pair.
    """
    from .directions import build_standard_directions

    dirs = build_standard_directions(3, delta)
    m = dirs.m  # 9: axes 0..2, pairs (12)->(3,4), (13)->(5,6), (23)->(7,8)

    def ev(z0, zp, zpp, x):
        s = _sym_halves(zpp, m)
        g = np.asarray(gbar(x), dtype=float)
        if np.any(g < 0.0):
            raise ValueError("rough cap field must be nonnegative")
        mixed = (np.minimum(g, np.abs(s[:, 3] - s[:, 4]))
                 + np.minimum(g, np.abs(s[:, 5] - s[:, 6]))
                 + np.minimum(g, np.abs(s[:, 7] - s[:, 8])))
        lap3 = s[:, :3].sum(axis=1) + 2.0 * s[:, 3:].sum(axis=1)
        return mixed + lap3 - np.asarray(f(x), dtype=float)

    def bind(dd):
        pts = dd.coords[dd.interior_ids]
        gn = np.asarray(gbar(pts), dtype=float)
        if np.any(gn < 0.0):
            raise ValueError("rough cap field must be nonnegative")
        return dict(gbar=gn, fnode=np.asarray(f(pts), dtype=float))

    lo = np.concatenate([np.full(3, 0.5), np.full(6, 0.5)])
    hi = np.concatenate([np.full(3, 0.5), np.full(6, 1.5)])
    z2_lo = np.concatenate([lo, lo])
    z2_hi = np.concatenate([hi, hi])
    hb = h_bar if h_bar is not None else _sampled_sup(f, 3)
    return OperatorSpec(name="eq12", dims=3, dirs=dirs, eval_fn=ev,
                        delta=delta, K0=0.0, H_bar=hb,
                        z2_lo=z2_lo, z2_hi=z2_hi, b_abs=0.0, c_max=0.0,
                        kind=KIND_EQ12, bind_data=bind)


def example_bellman(members, d, delta, dirs=None, K0=None, h_bar=None):
    """max over linear members a_k z''_k + b_j z'_j - c z'_0 + f(x).

    ``members`` is a list of dicts with per-entry weight arrays ``a`` (2m),
    ``b`` (2m), scalar ``c >= 0`` and an ``f`` callable.  Passing a list of
    lists builds the max-min (Isaacs) composite instead; that variant only
    runs on the generic path.
    """
    from .directions import build_standard_directions

    if dirs is None:
        dirs = build_standard_directions(d, delta)
    two_m = 2 * dirs.m
    isaacs = members and isinstance(members[0], (list, tuple))
    flat = [mm for grp in members for mm in grp] if isaacs else members

    for mem in flat:
        a = np.asarray(mem["a"], dtype=float)
        if a.shape != (two_m,):
            raise ValueError("member weight array must have 2m entries")
        if np.any(a < delta - 1e-12) or np.any(a > 1.0 / delta + 1e-12):
            raise ValueError("second-order weight outside [delta, 1/delta]")
        if mem.get("c", 0.0) < 0.0:
            raise ValueError("zeroth-order coefficient must be nonnegative")

    def member_values(z0, zp, zpp, x, group):
        vals = []
        for mem in group:
            a = np.asarray(mem["a"], dtype=float)
            b = np.asarray(mem.get("b", np.zeros(two_m)), dtype=float)
            c = float(mem.get("c", 0.0))
            fx = np.asarray(mem["f"](x), dtype=float)
            vals.append(zpp @ a + zp @ b - c * z0 + fx)
        return np.stack(vals, axis=0)

    if isaacs:
        def ev(z0, zp, zpp, x):
            outer = [member_values(z0, zp, zpp, x, grp).min(axis=0)
                     for grp in members]
            return np.stack(outer, axis=0).max(axis=0)
        kind, bind = None, None
    else:
        def ev(z0, zp, zpp, x):
            return member_values(z0, zp, zpp, x, members).max(axis=0)

        def bind(dd):
            pts = dd.coords[dd.interior_ids]
            mm = dirs.m
            apair = np.stack([np.asarray(mem["a"])[:mm]
                              + np.asarray(mem["a"])[mm:] for mem in members])
            bco = np.stack([np.asarray(mem.get("b", np.zeros(two_m)),
                                       dtype=float) for mem in members])
            cz = np.array([float(mem.get("c", 0.0)) for mem in members])
            fm = np.stack([np.asarray(mem["f"](pts), dtype=float)
                           for mem in members])
            return dict(apair=apair, bcoef=bco, czero=cz, fmem=fm)
        kind = KIND_LINMAX

    amat = np.stack([np.asarray(mem["a"], dtype=float) for mem in flat])
    bmat = np.stack([np.asarray(mem.get("b", np.zeros(two_m)), dtype=float)
                     for mem in flat])
    b_abs = np.abs(bmat).max(axis=0)
    c_max = max(float(mem.get("c", 0.0)) for mem in flat)
    k0 = K0 if K0 is not None else float(np.abs(bmat).sum(axis=1).max())
    if h_bar is None:
        h_bar = max(_sampled_sup(mem["f"], d) for mem in flat)
    return OperatorSpec(name="bellman", dims=d, dirs=dirs, eval_fn=ev,
                        delta=delta, K0=k0, H_bar=h_bar,
                        z2_lo=amat.min(axis=0), z2_hi=amat.max(axis=0),
                        b_abs=b_abs, c_max=c_max, kind=kind, bind_data=bind)


def example_nonuniqueness(mollify_eps=0.0):
    """One-dimensional u'' + sqrt(12 |u'|), the non-uniqueness model.

    The square root is written sign-consistently so that both the zero
    function and 1 - |x|^3 annihilate it on (-1, 1).  A positive
    ``mollify_eps`` replaces sqrt(s) by sqrt(s + eps^2) - eps, which makes
    the operator Lipschitz when it has to be iterated; residual studies
    evaluate the raw form.
    """
    from .directions import build_axis_directions

    dirs = build_axis_directions(1, 0.5)
    eps = float(mollify_eps)

    def ev(z0, zp, zpp, x):
        s = _sym_halves(zpp, 1)[:, 0]
        arg = 12.0 * np.abs(zp[:, 0])
        if eps > 0.0:
            root = np.sqrt(arg + eps * eps) - eps
        else:
            root = np.sqrt(arg)
        return s + root

    return OperatorSpec(name="nonuniqueness", dims=1, dirs=dirs, eval_fn=ev,
                        delta=0.5, K0=1.0, H_bar=3.0,
                        z2_lo=0.5, z2_hi=0.5,
                        b_abs=np.array([6.0 / eps if eps > 0 else np.inf,
                                        0.0]),
                        c_max=0.0)


def reference_pair_nonuniqueness():
    """The two candidate solutions on (-1, 1) with zero boundary data."""
    def zero(x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        return np.zeros(pts.shape[0])

    def cusp(x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        return 1.0 - np.abs(pts[:, 0]) ** 3

    return {"zero": zero, "one_minus_abs_cubed": cusp}


def make_cutoff_operator(op, K):
    """max(H, P(z'') - K) with the envelope built from the operator's delta.

    The envelope coefficient box is [delta/2, 2/delta] per entry, so the
    composite's declared second-difference boxes widen to the hull of the
    two branches.  K0 and the finiteness constant carry over unchanged.
    """
    if K < 0.0:
        raise ValueError("cut-off level must be nonnegative")
    delta = op.delta
    hi_p = 2.0 / delta
    lo_p = delta / 2.0

    def ev(z0, zp, zpp, x):
        base = op.eval_fn(z0, np.atleast_2d(zp), np.atleast_2d(zpp),
                          np.atleast_2d(x))
        pos = np.maximum(zpp, 0.0)
        neg = np.maximum(-zpp, 0.0)
        pval = hi_p * pos.sum(axis=-1) - lo_p * neg.sum(axis=-1)
        return np.maximum(base, pval - K)

    return OperatorSpec(name=f"{op.name}+cutoff", dims=op.dims, dirs=op.dirs,
                        eval_fn=ev, delta=delta, K0=op.K0, H_bar=op.H_bar,
                        z2_lo=np.minimum(op.z2_lo, lo_p),
                        z2_hi=np.maximum(op.z2_hi, hi_p),
                        b_abs=op.b_abs, c_max=op.c_max,
                        kind=op.kind, bind_data=op.bind_data,
                        cut_level=float(K), base=op)


def envelope_value(op, zpp):
    """P(z'') for the envelope paired with this operator's delta."""
    zpp = np.atleast_2d(np.asarray(zpp, dtype=float))
    hi_p = 2.0 / op.delta
    lo_p = op.delta / 2.0
    return (hi_p * np.maximum(zpp, 0.0).sum(axis=-1)
            - lo_p * np.maximum(-zpp, 0.0).sum(axis=-1))


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

@dataclass
class SlopeAuditReport:
    samples: int
    violations: int
    worst_excess: float
    box_lo: np.ndarray = field(repr=False, default=None)
    box_hi: np.ndarray = field(repr=False, default=None)

    @property
    def clean(self):
        return self.violations == 0


def slope_hull_check(op, samples=10_000, radius=5.0, seed=7,
                     x_lo=None, x_hi=None, rtol=1e-9):
    """Secant slopes of H against the declared coordinate boxes.

    For sampled pairs (z1, x), (z2, x) the difference H(z1) - H(z2) must
    lie between the extreme linear functionals of the box; violations
    beyond a relative rounding allowance are counted.  Report-only.
    """
    if radius <= 0.0:
        raise ValueError("sampling radius must be positive")
    rng = np.random.default_rng(seed)
    two_m = 2 * op.dirs.m
    ncoord = 1 + 2 * two_m
    lo, hi = op.coordinate_boxes()
    if x_lo is None:
        x_lo = -np.ones(op.dims)
    if x_hi is None:
        x_hi = np.ones(op.dims)

    z1 = rng.uniform(-radius, radius, size=(samples, ncoord))
    z2 = rng.uniform(-radius, radius, size=(samples, ncoord))
    x = rng.uniform(np.asarray(x_lo), np.asarray(x_hi),
                    size=(samples, op.dims))

    def split(z):
        return z[:, 0], z[:, 1:1 + two_m], z[:, 1 + two_m:]

    h1 = op.eval(*split(z1), x)
    h2 = op.eval(*split(z2), x)
    dz = z1 - z2
    upper = hi * np.maximum(dz, 0.0) - lo * np.maximum(-dz, 0.0)
    lower = lo * np.maximum(dz, 0.0) - hi * np.maximum(-dz, 0.0)
    upper = upper.sum(axis=1)
    lower = lower.sum(axis=1)
    scale = 1.0 + np.maximum(np.abs(h1), np.abs(h2)) \
        + np.abs(upper) + np.abs(lower)
    diff = h1 - h2
    excess = np.maximum(diff - upper, lower - diff) / scale
    bad = excess > rtol
    return SlopeAuditReport(samples=samples, violations=int(bad.sum()),
                            worst_excess=float(excess.max(initial=0.0)),
                            box_lo=lo, box_hi=hi)


def _sampled_sup(f, d, n=4096, radius=2.0, seed=11):
    """Crude sup estimate of |f| over a box, for default finiteness bounds."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-radius, radius, size=(n, d))
    vals = np.abs(np.asarray(f(pts), dtype=float))
    return float(vals.max() * (1.0 + 1e-9) + 1e-15)
