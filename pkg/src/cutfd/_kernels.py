"""Hot numeric kernels: damped Jacobi sweeps and residual evaluation.

Two interchangeable backends live here.  The default is a set of
``numba.njit`` kernels (parallel over nodes, double buffered, so results
are bit-identical across thread counts).  Setting the environment variable
``CUTFD_DISABLE_NUMBA=1`` before import selects a pure-numpy fallback that
computes the same quantities with vectorized gathers.  ``cutfd bench``
compares the two.

Operator kinds understood by the kernels:

* ``KIND_LINMAX``: max over a finite family of linear members
  ``sum_k a_k z''_k + sum_j b_j z'_j - c z'_0 + f(x)``.
* ``KIND_EQ12``: the three-dimensional example with per-node rough data,
  ``sum_pairs [gbar ^ |D_ij|] + 3*Laplacian - f``, written in directional
  second differences.

Anything else goes through the generic (numpy, vectorized-callable) path
in :mod:`cutfd.solver`.
"""

import os

import numpy as np

KIND_LINMAX = 0
KIND_EQ12 = 1

_env = os.environ.get("CUTFD_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _env not in ("", "0", "false", "no")

NUMBA_AVAILABLE = False
if not _DISABLED:
    try:
        import numba as nb

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a hard dependency
        NUMBA_AVAILABLE = False

#: True when the jit backend is active for this process.
NUMBA_ENABLED = NUMBA_AVAILABLE and not _DISABLED


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _pair_diffs_np(vals, nbr, u0, inv_h2):
    """Directional second differences, one column per direction pair."""
    m = nbr.shape[1] // 2
    return (vals[nbr[:, :m]] + vals[nbr[:, m:]] - 2.0 * u0[:, None]) * inv_h2


def _eval_np(kind, vals, nbr, int_ids, inv_h, inv_h2,
             apair, bcoef, czero, fmem, gbar, fnode,
             has_cut, cut_k, plo_pair, phi_pair):
    u0 = vals[int_ids]
    s = _pair_diffs_np(vals, nbr, u0, inv_h2)
    if kind == KIND_EQ12:
        # direction layout: axes 0..2, then pairs (+,-) at (3,4), (5,6), (7,8)
        lap3 = s[:, 0] + s[:, 1] + s[:, 2] + 2.0 * (
            s[:, 3] + s[:, 4] + s[:, 5] + s[:, 6] + s[:, 7] + s[:, 8])
        mixed = (np.minimum(gbar, np.abs(s[:, 3] - s[:, 4]))
                 + np.minimum(gbar, np.abs(s[:, 5] - s[:, 6]))
                 + np.minimum(gbar, np.abs(s[:, 7] - s[:, 8])))
        hval = mixed + lap3 - fnode
    else:
        zp = (vals[nbr] - u0[:, None]) * inv_h
        # apair already sums the +/- entry coefficients of each member
        hval = np.full(u0.shape, -np.inf)
        for mem in range(apair.shape[0]):
            acc = s @ apair[mem] + zp @ bcoef[mem] - czero[mem] * u0 + fmem[mem]
            np.maximum(hval, acc, out=hval)
    if has_cut:
        pos = np.maximum(s, 0.0)
        neg = np.maximum(-s, 0.0)
        pval = pos @ phi_pair - neg @ plo_pair
        np.maximum(hval, pval - cut_k, out=hval)
    return hval


def _sweep_np(kind, vals, out, step, nbr, int_ids, inv_h, inv_h2,
              apair, bcoef, czero, fmem, gbar, fnode,
              has_cut, cut_k, plo_pair, phi_pair):
    hval = _eval_np(kind, vals, nbr, int_ids, inv_h, inv_h2,
                    apair, bcoef, czero, fmem, gbar, fnode,
                    has_cut, cut_k, plo_pair, phi_pair)
    out[int_ids] = vals[int_ids] + step * hval
    return float(np.max(np.abs(hval)))


def _residual_np(kind, vals, nbr, int_ids, inv_h, inv_h2,
                 apair, bcoef, czero, fmem, gbar, fnode,
                 has_cut, cut_k, plo_pair, phi_pair):
    return _eval_np(kind, vals, nbr, int_ids, inv_h, inv_h2,
                    apair, bcoef, czero, fmem, gbar, fnode,
                    has_cut, cut_k, plo_pair, phi_pair)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @nb.njit(cache=True, inline="always")
    def _eval_node(kind, vals, nbr, i, u0, inv_h, inv_h2,
                   apair, bcoef, czero, fmem, gbar, fnode,
                   has_cut, cut_k, plo_pair, phi_pair):
        m = nbr.shape[1] // 2
        if kind == KIND_EQ12:
            s0 = (vals[nbr[i, 0]] + vals[nbr[i, 0 + m]] - 2.0 * u0) * inv_h2
            s1 = (vals[nbr[i, 1]] + vals[nbr[i, 1 + m]] - 2.0 * u0) * inv_h2
            s2 = (vals[nbr[i, 2]] + vals[nbr[i, 2 + m]] - 2.0 * u0) * inv_h2
            s3 = (vals[nbr[i, 3]] + vals[nbr[i, 3 + m]] - 2.0 * u0) * inv_h2
            s4 = (vals[nbr[i, 4]] + vals[nbr[i, 4 + m]] - 2.0 * u0) * inv_h2
            s5 = (vals[nbr[i, 5]] + vals[nbr[i, 5 + m]] - 2.0 * u0) * inv_h2
            s6 = (vals[nbr[i, 6]] + vals[nbr[i, 6 + m]] - 2.0 * u0) * inv_h2
            s7 = (vals[nbr[i, 7]] + vals[nbr[i, 7 + m]] - 2.0 * u0) * inv_h2
            s8 = (vals[nbr[i, 8]] + vals[nbr[i, 8 + m]] - 2.0 * u0) * inv_h2
            g = gbar[i]
            hval = (min(g, abs(s3 - s4)) + min(g, abs(s5 - s6))
                    + min(g, abs(s7 - s8))
                    + s0 + s1 + s2 + 2.0 * (s3 + s4 + s5 + s6 + s7 + s8)
                    - fnode[i])
        else:
            hval = -1.0e300
            for mem in range(apair.shape[0]):
                acc = fmem[mem, i] - czero[mem] * u0
                for k in range(m):
                    vp = vals[nbr[i, k]]
                    vm = vals[nbr[i, k + m]]
                    acc += apair[mem, k] * ((vp + vm - 2.0 * u0) * inv_h2)
                    acc += bcoef[mem, k] * ((vp - u0) * inv_h)
                    acc += bcoef[mem, k + m] * ((vm - u0) * inv_h)
                if acc > hval:
                    hval = acc
        if has_cut:
            pval = 0.0
            for k in range(m):
                sk = (vals[nbr[i, k]] + vals[nbr[i, k + m]] - 2.0 * u0) * inv_h2
                if sk >= 0.0:
                    pval += phi_pair[k] * sk
                else:
                    pval += plo_pair[k] * sk
            if pval - cut_k > hval:
                hval = pval - cut_k
        return hval

    @nb.njit(cache=True, parallel=True)
    def _sweep_jit(kind, vals, out, step, nbr, int_ids, inv_h, inv_h2,
                   apair, bcoef, czero, fmem, gbar, fnode,
                   has_cut, cut_k, plo_pair, phi_pair):
        n = int_ids.shape[0]
        maxres = 0.0
        for i in nb.prange(n):
            node = int_ids[i]
            u0 = vals[node]
            hval = _eval_node(kind, vals, nbr, i, u0, inv_h, inv_h2,
                              apair, bcoef, czero, fmem, gbar, fnode,
                              has_cut, cut_k, plo_pair, phi_pair)
            out[node] = u0 + step[i] * hval
            maxres = max(maxres, abs(hval))
        return maxres

    @nb.njit(cache=True, parallel=True)
    def _residual_jit(kind, vals, res, nbr, int_ids, inv_h, inv_h2,
                      apair, bcoef, czero, fmem, gbar, fnode,
                      has_cut, cut_k, plo_pair, phi_pair):
        n = int_ids.shape[0]
        for i in nb.prange(n):
            node = int_ids[i]
            u0 = vals[node]
            res[i] = _eval_node(kind, vals, nbr, i, u0, inv_h, inv_h2,
                                apair, bcoef, czero, fmem, gbar, fnode,
                                has_cut, cut_k, plo_pair, phi_pair)


def sweep(payload, vals, out, step, backend=None):
    """One Jacobi sweep ``out[int] = vals[int] + step * H[vals]``.

    Returns the sup norm of the residual of ``vals`` (not of ``out``).
    Boundary entries of ``out`` are left untouched; callers keep them equal
    to the boundary data in both buffers.
    """
    use_jit = NUMBA_ENABLED if backend is None else (backend == "numba")
    args = payload.kernel_args()
    if use_jit:
        return _sweep_jit(args[0], vals, out, step, *args[1:])
    return _sweep_np(args[0], vals, out, step, *args[1:])


def residual_field(payload, vals, backend=None):
    """Residual ``H[vals]`` at the interior nodes, as an array."""
    use_jit = NUMBA_ENABLED if backend is None else (backend == "numba")
    args = payload.kernel_args()
    if use_jit:
        res = np.empty(args[2].shape[0])
        _residual_jit(args[0], vals, res, *args[1:])
        return res
    return _residual_np(args[0], vals, *args[1:])


class KernelPayload:
    """Node-bound operator data in the flat layout the kernels expect."""

    def __init__(self, kind, nbr, int_ids, h, apair=None, bcoef=None,
                 czero=None, fmem=None, gbar=None, fnode=None,
                 has_cut=False, cut_k=0.0, plo_pair=None, phi_pair=None):
        m = nbr.shape[1] // 2
        n = int_ids.shape[0]
        empty2 = np.zeros((1, m))
        self.kind = int(kind)
        self.nbr = np.ascontiguousarray(nbr)
        self.int_ids = np.ascontiguousarray(int_ids)
        self.inv_h = 1.0 / h
        self.inv_h2 = 1.0 / (h * h)
        self.apair = np.ascontiguousarray(apair) if apair is not None else empty2
        self.bcoef = (np.ascontiguousarray(bcoef) if bcoef is not None
                      else np.zeros((1, 2 * m)))
        self.czero = np.ascontiguousarray(czero) if czero is not None else np.zeros(1)
        self.fmem = np.ascontiguousarray(fmem) if fmem is not None else np.zeros((1, n))
        self.gbar = np.ascontiguousarray(gbar) if gbar is not None else np.zeros(n)
        self.fnode = np.ascontiguousarray(fnode) if fnode is not None else np.zeros(n)
        self.has_cut = bool(has_cut)
        self.cut_k = float(cut_k)
        self.plo_pair = (np.ascontiguousarray(plo_pair) if plo_pair is not None
                         else np.zeros(m))
        self.phi_pair = (np.ascontiguousarray(phi_pair) if phi_pair is not None
                         else np.zeros(m))

    def kernel_args(self):
        return (self.kind, self.nbr, self.int_ids, self.inv_h, self.inv_h2,
                self.apair, self.bcoef, self.czero, self.fmem, self.gbar,
                self.fnode, self.has_cut, self.cut_k, self.plo_pair,
                self.phi_pair)
