"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``MARGIN_SCENARIO_DISABLE_NUMBA=1`` to force the numpy path. Both paths
are always importable (``*_numpy`` / ``*_numba``) so they can be compared.
"""
import os

import numpy as np

# scalar wrapper codes
W_IDENTITY, W_SCALE, W_ABS, W_CLIP, W_SIN, W_COS, W_SQRT, W_NEGCOS = range(8)
# binary operator codes
OP_MAX, OP_MIN, OP_PLUS, OP_MINUS = range(4)

_DISABLED = os.environ.get("MARGIN_SCENARIO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def wrap_numpy(kind, par, u):
    """Value and derivative of a catalog wrapper applied elementwise."""
    u = np.asarray(u, dtype=float)
    if kind == W_IDENTITY:
        return u.copy(), np.ones_like(u)
    if kind == W_SCALE:
        return par[0] * u, np.full_like(u, par[0])
    if kind == W_ABS:
        return np.abs(u), np.sign(u)
    if kind == W_CLIP:
        inside = (u > par[0]) & (u < par[1])
        return np.clip(u, par[0], par[1]), inside.astype(float)
    if kind == W_SIN:
        return np.sin(u), np.cos(u)
    if kind == W_COS:
        return np.cos(u), -np.sin(u)
    if kind == W_SQRT:
        v = np.maximum(u, par[1])
        r = np.sqrt(par[0] + v)
        return r, np.where(u > par[1], 0.5 / r, 0.0)
    if kind == W_NEGCOS:
        return -np.cos(u), np.sin(u)
    raise ValueError(f"unknown wrapper code {kind}")


def combine_chain_numpy(F, wkind, wpar, opkind, skind, spar):
    """Fold component values F (N x C) through the chain recursion.

    Returns the chain values (N,) and the sensitivities df/df_k (N x C).
    Ties in max/min keep the left (accumulated) branch.
    """
    N, C = F.shape
    acc, d0 = wrap_numpy(wkind[0], wpar[0], F[:, 0])
    sens = np.zeros((N, C))
    sens[:, 0] = d0
    for k in range(1, C):
        b, db = wrap_numpy(wkind[k], wpar[k], F[:, k])
        op = opkind[k]
        if op == OP_MAX or op == OP_MIN:
            right = b > acc if op == OP_MAX else b < acc
            acc = np.where(right, b, acc)
            sens[right] = 0.0
            sens[right, k] = db[right]
        elif op == OP_PLUS:
            acc = acc + b
            sens[:, k] = db
        elif op == OP_MINUS:
            acc = acc - b
            sens[:, k] = -db
        else:
            raise ValueError(f"unknown operator code {op}")
        acc, dr = wrap_numpy(skind[k], spar[k], acc)
        sens *= dr[:, None]
    return acc, sens


def sup_correlations_numpy(values, sigmas):
    """For each sign vector s, max over rows v of s.v / N."""
    N = values.shape[1]
    return (sigmas @ values.T).max(axis=1) / N


def farthest_point_numpy(values):
    """Farthest-point traversal under the sup-over-columns metric.

    Returns (order, radii): radii[k] is the covering radius of the first
    k+1 selected rows. Starts at row 0; ties go to the lowest index.
    """
    K = values.shape[0]
    order = np.empty(K, dtype=np.int64)
    radii = np.empty(K)
    dist = np.full(K, np.inf)
    cur = 0
    for k in range(K):
        order[k] = cur
        d = np.abs(values - values[cur]).max(axis=1)
        np.minimum(dist, d, out=dist)
        cur = int(np.argmax(dist))
        radii[k] = dist[cur]
    return order, radii


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _wrap_scalar(kind, par, u):
        if kind == W_IDENTITY:
            return u, 1.0
        if kind == W_SCALE:
            return par[0] * u, par[0]
        if kind == W_ABS:
            if u > 0:
                return u, 1.0
            if u < 0:
                return -u, -1.0
            return 0.0, 0.0
        if kind == W_CLIP:
            if u <= par[0]:
                return par[0], 0.0
            if u >= par[1]:
                return par[1], 0.0
            return u, 1.0
        if kind == W_SIN:
            return np.sin(u), np.cos(u)
        if kind == W_COS:
            return np.cos(u), -np.sin(u)
        if kind == W_SQRT:
            if u > par[1]:
                r = np.sqrt(par[0] + u)
                return r, 0.5 / r
            return np.sqrt(par[0] + par[1]), 0.0
        # W_NEGCOS
        return -np.cos(u), np.sin(u)

    @njit(cache=True)
    def combine_chain_numba(F, wkind, wpar, opkind, skind, spar):
        N, C = F.shape
        out = np.empty(N)
        sens = np.zeros((N, C))
        for i in range(N):
            acc, d0 = _wrap_scalar(wkind[0], wpar[0], F[i, 0])
            sens[i, 0] = d0
            for k in range(1, C):
                b, db = _wrap_scalar(wkind[k], wpar[k], F[i, k])
                op = opkind[k]
                if op == OP_MAX or op == OP_MIN:
                    if (op == OP_MAX and b > acc) or (op == OP_MIN and b < acc):
                        acc = b
                        for j in range(k):
                            sens[i, j] = 0.0
                        sens[i, k] = db
                elif op == OP_PLUS:
                    acc = acc + b
                    sens[i, k] = db
                else:
                    acc = acc - b
                    sens[i, k] = -db
                acc, dr = _wrap_scalar(skind[k], spar[k], acc)
                for j in range(k + 1):
                    sens[i, j] *= dr
            out[i] = acc
        return out, sens

    @njit(cache=True, fastmath=True)
    def sup_correlations_numba(values, sigmas):
        K, N = values.shape
        S = sigmas.shape[0]
        out = np.empty(S)
        for s in range(S):
            best = -np.inf
            for k in range(K):
                acc = 0.0
                for i in range(N):
                    acc += sigmas[s, i] * values[k, i]
                if acc > best:
                    best = acc
            out[s] = best / N
        return out

    @njit(cache=True)
    def farthest_point_numba(values):
        K, N = values.shape
        order = np.empty(K, dtype=np.int64)
        radii = np.empty(K)
        dist = np.full(K, np.inf)
        cur = 0
        for k in range(K):
            order[k] = cur
            for r in range(K):
                d = 0.0
                for i in range(N):
                    a = abs(values[r, i] - values[cur, i])
                    if a > d:
                        d = a
                        if d >= dist[r]:
                            break
                if d < dist[r]:
                    dist[r] = d
            nxt = 0
            for r in range(1, K):
                if dist[r] > dist[nxt]:
                    nxt = r
            cur = nxt
            radii[k] = dist[cur]
        return order, radii

else:  # pragma: no cover
    combine_chain_numba = combine_chain_numpy
    sup_correlations_numba = sup_correlations_numpy
    farthest_point_numba = farthest_point_numpy


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def combine_chain(F, wkind, wpar, opkind, skind, spar):
    F = np.ascontiguousarray(F, dtype=np.float64)
    if USE_NUMBA:
        return combine_chain_numba(F, wkind, wpar, opkind, skind, spar)
    return combine_chain_numpy(F, wkind, wpar, opkind, skind, spar)


def sup_correlations(values, sigmas):
    values = np.ascontiguousarray(values, dtype=np.float64)
    sigmas = np.ascontiguousarray(sigmas, dtype=np.float64)
    # a BLAS matmul beats the fused loop here (see benchmarks/), so both modes use it
    return sup_correlations_numpy(values, sigmas)


def farthest_point(values):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        return farthest_point_numba(values)
    return farthest_point_numpy(values)
