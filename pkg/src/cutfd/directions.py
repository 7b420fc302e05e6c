"""Direction sets, the cut-off envelope, and Hessian decompositions.

A direction set holds finitely many vectors ``l_{+-1..+-m}`` in the closed
unit ball with rational coordinates, closed under negation and spanning
R^d.  Pure second-order information along those directions is carried as a
vector of ``2m`` values indexed like the directions (rows ``0..m-1`` are
``l_1..l_m``, rows ``m..2m-1`` their negatives), so data coming from a
symmetric matrix or from centered second differences is symmetric in the
two halves.
"""

from dataclasses import dataclass, field
import json

import numpy as np


@dataclass(frozen=True)
class DirectionSet:
    """Vectors l_{+-1..+-m} plus the ellipticity constants tied to them.

    Attributes
    ----------
    dims : int
        Ambient dimension d.
    m : int
        Number of direction pairs; ``vectors`` has ``2*m`` rows.
    vectors : ndarray, shape (2m, d)
        Unit-ball vectors; row ``m+k`` is ``-vectors[k]``.
    numerators : ndarray of int, shape (2m, d)
        Exact coordinates: ``vectors = numerators / lattice_denominator``.
    delta : float
        Ellipticity constant in (0, 1].
    delta_hat : float
        Cut-off constant in (0, delta/4]; defaults to delta/4.
    lattice_denominator : int
        Smallest q with ``q * l_k`` integer for every k.
    """

    dims: int
    m: int
    vectors: np.ndarray
    numerators: np.ndarray
    delta: float
    delta_hat: float
    lattice_denominator: int
    pair_closed: bool = field(default=True)

    def validate(self):
        q = self.lattice_denominator
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if not (0.0 < self.delta_hat <= self.delta / 4.0 + 1e-15):
            raise ValueError("delta_hat must lie in (0, delta/4]")
        if self.vectors.shape != (2 * self.m, self.dims):
            raise ValueError("vectors must have shape (2m, d)")
        if not np.array_equal(self.numerators[self.m:], -self.numerators[:self.m]):
            raise ValueError("directions must come in +-l pairs")
        if not np.allclose(self.vectors, self.numerators / q):
            raise ValueError("vector coordinates must be multiples of 1/q")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms > 1.0 + 1e-12):
            raise ValueError("directions must lie in the closed unit ball")
        if np.linalg.matrix_rank(self.vectors) < self.dims:
            raise ValueError("directions must span R^d")
        if self.pair_closed:
            self._validate_pair_closure()
        return self

    def _validate_pair_closure(self):
        """Axes and all half-sums (e_i +- e_j)/2 must be present."""
        rows = {tuple(r) for r in self.numerators.tolist()}
        q = self.lattice_denominator
        for i in range(self.dims):
            e_i = [0] * self.dims
            e_i[i] = q
            if tuple(e_i) not in rows:
                raise ValueError(f"missing axis direction e_{i + 1}")
            for j in range(i + 1, self.dims):
                for sign in (1, -1):
                    v = [0] * self.dims
                    v[i] = q // 2
                    v[j] = sign * (q // 2)
                    if tuple(v) not in rows:
                        raise ValueError("missing half-sum direction "
                                         f"(e_{i + 1} {'+' if sign > 0 else '-'} e_{j + 1})/2")

    def to_json(self):
        obj = {
            "dims": self.dims,
            "m": self.m,
            "vectors": [[[int(n), int(self.lattice_denominator)] for n in row]
                        for row in self.numerators.tolist()],
            "delta": self.delta,
            "delta_hat": self.delta_hat,
        }
        return json.dumps(obj)

    @staticmethod
    def from_json(text):
        obj = json.loads(text)
        m = int(obj["m"])
        numer = np.array([[pair[0] for pair in row] for row in obj["vectors"]],
                         dtype=np.int64)
        dens = {pair[1] for row in obj["vectors"] for pair in row}
        if len(dens) != 1:
            raise ValueError("mixed denominators in serialized direction set")
        q = dens.pop()
        ds = DirectionSet(dims=int(obj["dims"]), m=m,
                          vectors=numer / q, numerators=numer,
                          delta=float(obj["delta"]),
                          delta_hat=float(obj["delta_hat"]),
                          lattice_denominator=int(q),
                          pair_closed=False)
        return ds


def build_standard_directions(d, delta, delta_hat=None):
    """Axes plus all pair half-sums: {+-e_i} and {+-(e_i +- e_j)/2}.

    For d = 1 this degenerates to {+1, -1} with lattice denominator 1.
    """
    if d not in (1, 2, 3):
        raise ValueError("supported dimensions are 1, 2, 3")
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    if delta_hat is None:
        delta_hat = delta / 4.0
    q = 1 if d == 1 else 2
    rows = []
    for i in range(d):
        e_i = [0] * d
        e_i[i] = q
        rows.append(e_i)
    for i in range(d):
        for j in range(i + 1, d):
            for sign in (1, -1):
                v = [0] * d
                v[i] = q // 2
                v[j] = sign * (q // 2)
                rows.append(v)
    numer = np.array(rows, dtype=np.int64)
    numer = np.vstack([numer, -numer])
    ds = DirectionSet(dims=d, m=len(rows), vectors=numer / q, numerators=numer,
                      delta=float(delta), delta_hat=float(delta_hat),
                      lattice_denominator=q, pair_closed=True)
    return ds.validate()


def build_decomposition_directions(d, delta, reach=4):
    """Standard set enriched with all primitive integer directions of
    max-norm up to ``reach``, scaled into the unit ball with one even
    denominator.

    The cone spanned by the dyads of the minimal standard set is exactly
    the diagonally dominant one, which misses strongly anisotropic
    matrices of the admissible eigenvalue band; resolving the band
    [delta/4, 4/delta] needs an angular net that refines as delta drops.
    reach=4 is verified to cover delta >= 1/2 in d <= 3; pass a larger
    reach for smaller delta.
    """
    if d not in (1, 2, 3):
        raise ValueError("supported dimensions are 1, 2, 3")
    if d == 1:
        return build_standard_directions(1, delta)
    q = int(np.ceil(reach * np.sqrt(d)))
    q += q % 2  # half-sum coordinates need an even denominator
    base = build_standard_directions(d, delta)
    scale = q // base.lattice_denominator
    rows = [tuple(r) for r in (base.numerators[:base.m] * scale).tolist()]
    seen = set(rows) | {tuple((-np.asarray(r)).tolist()) for r in rows}
    import itertools

    for v in itertools.product(range(-reach, reach + 1), repeat=d):
        v = np.array(v, dtype=np.int64)
        if not v.any():
            continue
        if np.gcd.reduce(np.abs(v)[np.abs(v) > 0]) != 1:
            continue
        if v[np.argmax(v != 0)] < 0:
            v = -v
        key = tuple(v.tolist())
        if key in seen:
            continue
        seen.add(key)
        seen.add(tuple((-v).tolist()))
        rows.append(key)
    numer = np.array(rows, dtype=np.int64)
    numer = np.vstack([numer, -numer])
    ds = DirectionSet(dims=d, m=len(rows), vectors=numer / q, numerators=numer,
                      delta=float(delta), delta_hat=delta / 4.0,
                      lattice_denominator=q, pair_closed=True)
    return ds.validate()


def build_axis_directions(d, delta, delta_hat=None):
    """Reduced set {+-e_i} only, for operators that touch no mixed terms.

    Satisfies symmetry, span and rationality but not the half-sum closure,
    so ``pair_closed`` is False and validation skips that clause.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if delta_hat is None:
        delta_hat = delta / 4.0
    numer = np.vstack([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    ds = DirectionSet(dims=d, m=d, vectors=numer.astype(float), numerators=numer,
                      delta=float(delta), delta_hat=float(delta_hat),
                      lattice_denominator=1, pair_closed=False)
    return ds.validate()


def cutoff_P(z2, delta_hat):
    """Convex envelope max_{dh/2 <= a_k <= 2/dh} sum_k a_k z''_k, closed form.

    The maximum over the coefficient box is attained componentwise, giving
    ``sum_k [ (2/dh) max(z_k, 0) - (dh/2) max(-z_k, 0) ]``.  Positively
    homogeneous of degree one and convex; works on any (..., 2m) array,
    reducing over the last axis.
    """
    if not (0.0 < delta_hat <= 1.0):
        raise ValueError("cut-off constant must lie in (0, 1]")
    z2 = np.asarray(z2, dtype=float)
    hi = 2.0 / delta_hat
    lo = delta_hat / 2.0
    pos = np.maximum(z2, 0.0)
    neg = np.maximum(-z2, 0.0)
    return (hi * pos - lo * neg).sum(axis=-1)


def cutoff_P_gradient(z2, delta_hat):
    """Componentwise envelope slope; at zeros the upper coefficient applies."""
    z2 = np.asarray(z2, dtype=float)
    return np.where(z2 >= 0.0, 2.0 / delta_hat, delta_hat / 2.0)


def hessian_to_pure(u_hess, dirs):
    """Map a symmetric matrix to its 2m pure directional second derivatives.

    Component k is ``<M l_k, l_k>``; the result is symmetric in the +-k
    halves by construction.
    """
    mat = np.asarray(u_hess, dtype=float)
    if mat.shape != (dirs.dims, dirs.dims):
        raise ValueError("matrix shape does not match the direction set")
    if not np.allclose(mat, mat.T, atol=1e-12 * (1.0 + np.abs(mat).max())):
        raise ValueError("matrix must be symmetric")
    return np.einsum("kd,de,ke->k", dirs.vectors, mat, dirs.vectors)


def pure_to_mixed(z2, dirs, i, j):
    """Recover the (i, j) mixed entry from the two half-sum components."""
    kp, km = _halfsum_indices(dirs, i, j)
    return z2[..., kp] - z2[..., km]


def _halfsum_indices(dirs, i, j):
    q = dirs.lattice_denominator
    vp = [0] * dirs.dims
    vp[i] = q // 2
    vp[j] = q // 2
    vm = list(vp)
    vm[j] = -(q // 2)
    rows = [tuple(r) for r in dirs.numerators.tolist()]
    return rows.index(tuple(vp)), rows.index(tuple(vm))


class DecompositionError(RuntimeError):
    pass


def decompose_spd(a, dirs, tol=1e-8, floor=1e-6, max_iters=100_000):
    """Nonnegative weights lam with ``a = sum_k lam_k l_k l_k^T``.

    Solves the bounded least-squares feasibility problem by projected
    gradient descent with the pair tie ``lam_{-k} = lam_k``.  Input must
    have eigenvalues in ``[delta/4, 4/delta]``.  Returns the tied weight
    vector of length 2m, the achieved lower bound (reported, never
    compared with a theoretical constant), and the reconstruction
    residual.

    The minimal standard set only spans the diagonally dominant cone;
    use ``build_decomposition_directions`` for general members of the
    eigenvalue band.
    """
    a = np.asarray(a, dtype=float)
    d = dirs.dims
    if a.shape != (d, d) or not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("input must be a symmetric d x d matrix")
    eigs = np.linalg.eigvalsh(a)
    lo_eig, hi_eig = dirs.delta / 4.0, 4.0 / dirs.delta
    if eigs[0] < lo_eig - 1e-10 or eigs[-1] > hi_eig + 1e-10:
        raise ValueError("matrix eigenvalues outside the admissible band "
                         f"[{lo_eig:g}, {hi_eig:g}]")

    m = dirs.m
    iu = np.triu_indices(d)
    # design matrix over the tied unknowns: column k is vec(2 l_k l_k^T)
    cols = np.empty((len(iu[0]), m))
    for k in range(m):
        lk = dirs.vectors[k]
        cols[:, k] = 2.0 * np.outer(lk, lk)[iu]
    # off-diagonal entries count twice in the Frobenius norm
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    mat = cols * w[:, None]
    rhs = a[iu] * w

    # accelerated projected gradient (momentum with function restart);
    # the plain version crawls on eigenvalue-band boundary matrices
    col = np.linalg.norm(mat, axis=0)
    mat_s = mat / col
    lam = np.full(m, max(floor, eigs.mean() / (2.0 * m))) * col
    floor_s = floor * col
    lip = np.linalg.norm(mat_s, 2) ** 2
    step = 1.0 / lip
    lam_prev = lam.copy()
    t_acc = 1.0
    for _ in range(max_iters):
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        y = lam + ((t_acc - 1.0) / t_next) * (lam - lam_prev)
        grad = mat_s.T @ (mat_s @ y - rhs)
        lam_next = np.maximum(y - step * grad, floor_s)
        if np.dot(grad, lam_next - lam) > 0.0:  # momentum restart
            t_next = 1.0
            lam_next = np.maximum(lam - step * (mat_s.T @ (mat_s @ lam - rhs)),
                                  floor_s)
        lam_prev, lam, t_acc = lam, lam_next, t_next
        if np.linalg.norm(mat_s @ lam - rhs) <= tol * 0.01:
            break
    lam = lam / col
    recon = np.zeros((d, d))
    for k in range(m):
        lk = dirs.vectors[k]
        recon += 2.0 * lam[k] * np.outer(lk, lk)
    frob = np.linalg.norm(recon - a)
    if frob > tol:
        raise DecompositionError(
            f"no admissible decomposition within {tol:g} (residual {frob:.3e}); "
            "the direction set may be too poor for this matrix")
    lam_full = np.concatenate([lam, lam])
    return lam_full, float(lam.min()), float(frob)
