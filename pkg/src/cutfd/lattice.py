"""Domains, refined lattices, and directional difference operators.

The grid is the scaled integer lattice ``(h/q) Z^d`` (q from the direction
set), so every stencil offset ``h * l_k`` is an exact integer step.  Nodes
are the lattice points of the closed domain; those with distance to the
complement above ``h`` form the equation interior, the rest the Dirichlet
strip.  Values at lattice points outside the closure are never stored,
they come from the boundary function on demand.

Storage is dense over the bounding box (an int32 id grid) plus flat node
arrays, which keeps stencil lookups O(1) at desk scale.
"""

from dataclasses import dataclass
import itertools

import numpy as np

_NET_CACHE = {}


def _direction_net(d):
    """All nonzero sign patterns in {-1,0,1}^d, normalized."""
    if d not in _NET_CACHE:
        pats = [p for p in itertools.product((-1, 0, 1), repeat=d)
                if any(p)]
        arr = np.array(pats, dtype=float)
        arr /= np.linalg.norm(arr, axis=1)[:, None]
        _NET_CACHE[d] = arr
    return _NET_CACHE[d]


@dataclass
class DomainSpec:
    """Bounded domain with an exterior-ball radius and distance oracle.

    ``kind`` is one of ``ball``, ``box``, ``predicate``.  For the first two
    the distance to the complement is exact; predicate domains get it from
    ray bisection along an estimated inward normal (see ``_predicate_rho``).
    """

    kind: str
    center: np.ndarray = None
    radius: float = 0.0
    lo: np.ndarray = None
    hi: np.ndarray = None
    inside: object = None
    bbox: tuple = None
    exterior_ball_radius: float = 1.0
    rho_tol_factor: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.exterior_ball_radius <= 1.0):
            raise ValueError("exterior ball radius must lie in (0, 1]")

    @staticmethod
    def ball(center, radius, exterior_ball_radius=None):
        center = np.asarray(center, dtype=float)
        rho0 = min(1.0, radius) if exterior_ball_radius is None \
            else exterior_ball_radius
        return DomainSpec(kind="ball", center=center, radius=float(radius),
                          exterior_ball_radius=rho0)

    @staticmethod
    def box(lo, hi, exterior_ball_radius=1.0):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent")
        return DomainSpec(kind="box", lo=lo, hi=hi,
                          exterior_ball_radius=exterior_ball_radius)

    @staticmethod
    def predicate(inside, bbox, exterior_ball_radius):
        lo, hi = (np.asarray(b, dtype=float) for b in bbox)
        return DomainSpec(kind="predicate", inside=inside, bbox=(lo, hi),
                          exterior_ball_radius=exterior_ball_radius)

    @property
    def dims(self):
        if self.kind == "ball":
            return self.center.size
        if self.kind == "box":
            return self.lo.size
        return self.bbox[0].size

    def bounding_box(self):
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        if self.kind == "box":
            return self.lo, self.hi
        return self.bbox

    def diameter(self):
        lo, hi = self.bounding_box()
        if self.kind == "ball":
            return 2.0 * self.radius
        return float(np.linalg.norm(hi - lo))

    def inradius_sup(self, h_hint=None):
        """sup of h for which the h-interior is nonempty (mu of the domain)."""
        if self.kind == "ball":
            return self.radius
        if self.kind == "box":
            return float(np.min(self.hi - self.lo) / 2.0)
        lo, hi = self.bbox
        grid = np.stack(np.meshgrid(
            *[np.linspace(lo[i], hi[i], 21) for i in range(lo.size)],
            indexing="ij"), axis=-1).reshape(-1, lo.size)
        tol = (h_hint or np.min(hi - lo) / 20.0) * self.rho_tol_factor
        return float(np.max(self.rho(grid, tol=tol)))

    def contains_closure(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "ball":
            r = np.linalg.norm(pts - self.center, axis=1)
            return r <= self.radius + 1e-12
        if self.kind == "box":
            return np.all((pts >= self.lo - 1e-12) & (pts <= self.hi + 1e-12),
                          axis=1)
        return np.asarray([bool(self.inside(p)) for p in pts])

    def rho(self, pts, tol=None):
        """Distance to the complement (0 outside the closure)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "ball":
            return np.maximum(self.radius - np.linalg.norm(pts - self.center,
                                                           axis=1), 0.0)
        if self.kind == "box":
            gaps = np.minimum(pts - self.lo, self.hi - pts)
            return np.maximum(gaps.min(axis=1), 0.0)
        tol = tol if tol is not None else 1e-4
        return np.array([_predicate_rho(self, p, tol) for p in pts])


def _ray_exit(spec, x, direction, reach):
    """Bracketed exit distance along a ray, or None if it never leaves."""
    t_hi = None
    t = reach / 64.0
    while t <= reach * 1.0001:
        if not spec.inside(x + t * direction):
            t_hi = t
            break
        t *= 2.0
    return t_hi


def _predicate_rho(spec, x, tol):
    """Bisection along an estimated inward normal, to the given tolerance.

    A coarse direction net finds the nearest boundary crossing; the closest
    hit direction approximates the outward normal, and tangential probing
    polishes it before the final bisection.
    """
    x = np.asarray(x, dtype=float)
    if not spec.inside(x):
        return 0.0
    lo_b, hi_b = spec.bbox
    reach = float(np.linalg.norm(hi_b - lo_b)) + 1e-9

    def exit_dist(direction):
        t_hi = _ray_exit(spec, x, direction, reach)
        if t_hi is None:
            return np.inf
        t_lo = 0.0
        while t_hi - t_lo > tol / 2.0:
            mid = 0.5 * (t_lo + t_hi)
            if spec.inside(x + mid * direction):
                t_lo = mid
            else:
                t_hi = mid
        return 0.5 * (t_lo + t_hi)

    net = _direction_net(x.size)
    dists = np.array([exit_dist(v) for v in net])
    best = int(np.argmin(dists))
    best_dir, best_t = net[best].copy(), dists[best]
    # polish the direction: probe small tangential tilts until no gain
    angle = 0.35
    while angle > 0.01:
        improved = False
        for axis in range(x.size):
            for sign in (1.0, -1.0):
                tilt = best_dir.copy()
                tilt[axis] += sign * angle
                tilt /= np.linalg.norm(tilt)
                t = exit_dist(tilt)
                if t < best_t - tol / 10.0:
                    best_dir, best_t = tilt, t
                    improved = True
        if not improved:
            angle *= 0.5
    return best_t


@dataclass
class DiscreteDomain:
    """Refined lattice restricted to the domain closure, with stencil tables."""

    domain: DomainSpec
    h: float
    dirs: object
    spacing: float
    origin: np.ndarray
    grid_shape: tuple
    grid_id: np.ndarray
    coords: np.ndarray
    rho: np.ndarray
    interior_mask: np.ndarray
    interior_ids: np.ndarray
    boundary_ids: np.ndarray
    nbr: np.ndarray
    lattice_index: np.ndarray = None

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_interior(self):
        return self.interior_ids.size

    def node_at(self, point):
        """Node id at a lattice-aligned point, or -1."""
        idx = np.rint((np.asarray(point, dtype=float) - self.origin)
                      / self.spacing).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.grid_shape)):
            return -1
        return int(self.grid_id[tuple(idx)])

    def interior_rows_of(self, node_ids):
        """Map node ids to rows of the interior arrays."""
        lookup = -np.ones(self.n_nodes, dtype=np.int64)
        lookup[self.interior_ids] = np.arange(self.n_interior)
        return lookup[node_ids]


def build_discrete_domain(domain, h, dirs):
    """Classify lattice nodes and build the neighbor table.

    Interior means distance to the complement strictly above h; every
    stencil arm from an interior node then lands on a stored node, which
    is checked, not assumed.
    """
    mu = domain.inradius_sup(h_hint=h)
    if not (0.0 < h < mu):
        raise ValueError(f"mesh size h={h:g} must lie in (0, mu={mu:g}) "
                         "for a nonempty interior")
    d = domain.dims
    if dirs.dims != d:
        raise ValueError("direction set dimension does not match the domain")
    q = dirs.lattice_denominator
    spacing = h / q
    lo, hi = domain.bounding_box()
    i_lo = np.floor(lo / spacing - 0.5).astype(np.int64)
    i_hi = np.ceil(hi / spacing + 0.5).astype(np.int64)
    shape = tuple((i_hi - i_lo + 1).tolist())
    origin = i_lo * spacing

    axes = [origin[k] + spacing * np.arange(shape[k]) for k in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, d)
    tol = h * domain.rho_tol_factor
    in_closure = domain.contains_closure(pts)
    grid_id = -np.ones(len(pts), dtype=np.int32)
    node_pts = pts[in_closure]
    grid_id[np.flatnonzero(in_closure)] = np.arange(node_pts.shape[0],
                                                    dtype=np.int32)
    grid_id = grid_id.reshape(shape)

    rho = domain.rho(node_pts, tol=tol)
    interior_mask = rho > h
    interior_ids = np.flatnonzero(interior_mask).astype(np.int64)
    boundary_ids = np.flatnonzero(~interior_mask).astype(np.int64)
    if interior_ids.size == 0:
        raise ValueError("empty interior: reduce h below the domain inradius")

    lat_idx = np.rint((node_pts - origin) / spacing).astype(np.int64)
    offsets = dirs.numerators  # exact lattice steps for h * l_k
    nbr = np.empty((interior_ids.size, 2 * dirs.m), dtype=np.int32)
    for j in range(2 * dirs.m):
        tgt = lat_idx[interior_ids] + offsets[j]
        flat = np.ravel_multi_index(tuple(tgt.T), shape, mode="clip")
        ids = grid_id.reshape(-1)[flat]
        oob = np.any((tgt < 0) | (tgt >= np.asarray(shape)), axis=1)
        ids = np.where(oob, -1, ids)
        if np.any(ids < 0):
            bad = interior_ids[np.flatnonzero(ids < 0)[0]]
            raise RuntimeError("stencil closure violated at node "
                               f"{node_pts[bad]}; check the domain oracle")
        nbr[:, j] = ids

    return DiscreteDomain(domain=domain, h=float(h), dirs=dirs,
                          spacing=spacing, origin=origin, grid_shape=shape,
                          grid_id=grid_id, coords=node_pts, rho=rho,
                          interior_mask=interior_mask,
                          interior_ids=interior_ids, boundary_ids=boundary_ids,
                          nbr=nbr, lattice_index=lat_idx)


class GridFunction:
    """Node values plus a boundary function for everything off the grid."""

    def __init__(self, dd, values, exterior):
        values = np.asarray(values, dtype=float)
        if values.shape != (dd.n_nodes,):
            raise ValueError("values must be one number per node")
        self.dd = dd
        self.values = values
        self.exterior = exterior

    @staticmethod
    def from_callable(dd, fn, exterior=None):
        ext = exterior if exterior is not None else fn
        return GridFunction(dd, _vec_eval(fn, dd.coords), ext)

    def value_at(self, point):
        nid = self.dd.node_at(point)
        if nid >= 0:
            return float(self.values[nid])
        return float(np.asarray(_vec_eval(self.exterior,
                                          np.atleast_2d(point))).reshape(-1)[0])


def _vec_eval(fn, pts):
    """Evaluate a scalar field on (n, d) points, accepting either a
    vectorized callable or one that works pointwise."""
    out = fn(pts)
    out = np.asarray(out, dtype=float)
    if out.shape == (pts.shape[0],):
        return out
    if out.ndim == 0 and pts.shape[0] == 1:
        return out.reshape(1)
    return np.array([float(fn(p)) for p in pts])


def shifted_value(gf, node_id, j):
    """u(x + h l_j) via the node table, falling back to the exterior rule."""
    dd = gf.dd
    x = dd.coords[node_id] + dd.h * dd.dirs.vectors[j]
    nid = dd.node_at(x)
    if nid >= 0:
        return float(gf.values[nid])
    return gf.value_at(x)


def first_difference(gf, node_id, j):
    """(u(x + h l_j) - u(x)) / h."""
    dd = gf.dd
    return (shifted_value(gf, node_id, j) - gf.values[node_id]) / dd.h


def second_difference(gf, node_id, j):
    """(u(x + h l_j) - 2 u(x) + u(x - h l_j)) / h^2."""
    dd = gf.dd
    m = dd.dirs.m
    j_opp = j + m if j < m else j - m
    up = shifted_value(gf, node_id, j)
    dn = shifted_value(gf, node_id, j_opp)
    return (up - 2.0 * gf.values[node_id] + dn) / dd.h ** 2


def discrete_hessian_vector(gf, node_id):
    """All 2m directional second differences at an interior node."""
    dd = gf.dd
    row = dd.interior_rows_of(np.array([node_id]))[0]
    if row < 0:
        raise ValueError("discrete Hessian data requires an interior node")
    m = dd.dirs.m
    vp = gf.values[dd.nbr[row, :m]]
    vm = gf.values[dd.nbr[row, m:]]
    pair = (vp + vm - 2.0 * gf.values[node_id]) / dd.h ** 2
    return np.concatenate([pair, pair])


def all_pair_second_differences(dd, values):
    """(n_int, m) second differences of a value array, one column per pair."""
    m = dd.dirs.m
    u0 = values[dd.interior_ids]
    return (values[dd.nbr[:, :m]] + values[dd.nbr[:, m:]]
            - 2.0 * u0[:, None]) / dd.h ** 2


def all_first_differences(dd, values):
    """(n_int, 2m) forward differences along every direction."""
    u0 = values[dd.interior_ids]
    return (values[dd.nbr] - u0[:, None]) / dd.h


def export_csv(gf, path):
    """Write nodes as x1..xd, value, rho, is_interior."""
    dd = gf.dd
    d = dd.domain.dims
    header = ",".join([f"x{i + 1}" for i in range(d)]
                      + ["value", "rho", "is_interior"])
    data = np.column_stack([dd.coords, gf.values, dd.rho,
                            dd.interior_mask.astype(float)])
    np.savetxt(path, data, delimiter=",", header=header, comments="",
               fmt="%.17g")
