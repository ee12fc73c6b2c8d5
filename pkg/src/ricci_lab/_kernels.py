"""Fused pointwise kernels for the flow right-hand side.

Inputs are flattened over the grid: ``g`` (npack, P), ``dg`` (n, npack, P),
``ddg`` (npairs, npack, P) with pairs a <= b in packed order. The RHS kernel
works on blocks of points with the point index innermost so that every small
tensor contraction vectorizes across the block. The einsum
pipeline in :mod:`ricci_lab.curvature` / :func:`ricci_lab.flow.deturck_rhs`
computes the same quantities and is kept as the reference. fastmath only
licenses reassociation here; agreement with the reference is tested to 1e-12.
"""
import numpy as np
from numba import njit

# points per block in the RHS kernel; the workspace stays in L1
_BLOCK = 128


@njit(cache=True, fastmath=True, error_model="numpy")
def deturck_rhs_kernel(g, dg, ddg, sidx, pidx, bg_gamma, bg_dgamma, has_bg, rhs, w_up_out, scalar_out):
    n = sidx.shape[0]
    P = g.shape[1]
    B = _BLOCK
    M = np.empty((n, 2 * n, B))
    Gi = np.empty((n, n, B))
    GL = np.empty((n, n, n, B))
    GU = np.empty((n, n, n, B))
    RIC = np.empty((n, n, B))
    DGI = np.empty((n, n, n, B))
    T = np.empty((n, n, B))
    DW = np.empty((n, n, B))
    W = np.empty((n, B))
    WL = np.empty((n, B))
    V = np.empty((n, B))
    acc = np.empty(B)
    f = np.empty(B)
    for s0 in range(0, P, B):
        nb = min(B, P - s0)
        # inverse by Gauss-Jordan; the metric is positive definite so no pivoting
        for i in range(n):
            for j in range(n):
                k = sidx[i, j]
                for q in range(nb):
                    M[i, j, q] = g[k, s0 + q]
                    M[i, n + j, q] = 1.0 if i == j else 0.0
        for c in range(n):
            for q in range(nb):
                f[q] = 1.0 / M[c, c, q]
            for j in range(2 * n):
                for q in range(nb):
                    M[c, j, q] *= f[q]
            for r in range(n):
                if r != c:
                    for q in range(nb):
                        f[q] = M[r, c, q]
                    for j in range(2 * n):
                        for q in range(nb):
                            M[r, j, q] -= f[q] * M[c, j, q]
        for i in range(n):
            for j in range(n):
                for q in range(nb):
                    Gi[i, j, q] = 0.5 * (M[i, n + j, q] + M[j, n + i, q])
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    a1 = sidx[j, k]
                    a2 = sidx[i, k]
                    a3 = sidx[i, j]
                    for q in range(nb):
                        GL[k, i, j, q] = 0.5 * (dg[i, a1, s0 + q] + dg[j, a2, s0 + q] - dg[k, a3, s0 + q])
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    for q in range(nb):
                        acc[q] = 0.0
                    for l in range(n):
                        for q in range(nb):
                            acc[q] += Gi[k, l, q] * GL[l, i, j, q]
                    for q in range(nb):
                        GU[k, i, j, q] = acc[q]
        # Ricci
        for b in range(n):
            for d in range(b, n):
                for q in range(nb):
                    RIC[b, d, q] = 0.0
                for a in range(n):
                    for c in range(n):
                        i1 = pidx[b, c]
                        k1 = sidx[a, d]
                        i2 = pidx[a, d]
                        k2 = sidx[b, c]
                        i3 = pidx[a, c]
                        k3 = sidx[b, d]
                        i4 = pidx[b, d]
                        k4 = sidx[a, c]
                        for q in range(nb):
                            acc[q] = 0.5 * (ddg[i1, k1, s0 + q] + ddg[i2, k2, s0 + q]
                                            - ddg[i3, k3, s0 + q] - ddg[i4, k4, s0 + q])
                        for e in range(n):
                            for q in range(nb):
                                acc[q] += GU[e, b, c, q] * GL[e, a, d, q] - GU[e, b, d, q] * GL[e, a, c, q]
                        for q in range(nb):
                            RIC[b, d, q] += Gi[a, c, q] * acc[q]
                if d != b:
                    for q in range(nb):
                        RIC[d, b, q] = RIC[b, d, q]
        for q in range(nb):
            acc[q] = 0.0
        for b in range(n):
            for d in range(n):
                for q in range(nb):
                    acc[q] += Gi[b, d, q] * RIC[b, d, q]
        for q in range(nb):
            scalar_out[s0 + q] = acc[q]
        # DeTurck field
        for k in range(n):
            for q in range(nb):
                W[k, q] = 0.0
                WL[k, q] = 0.0
            for a in range(n):
                for c in range(n):
                    for q in range(nb):
                        W[k, q] += Gi[a, c, q] * GU[k, a, c, q]
                        WL[k, q] += Gi[a, c, q] * GL[k, a, c, q]
        for i in range(n):
            for a in range(n):
                for y in range(n):
                    for q in range(nb):
                        acc[q] = 0.0
                    for x in range(n):
                        kk = sidx[x, y]
                        for q in range(nb):
                            acc[q] += Gi[a, x, q] * dg[i, kk, s0 + q]
                    for q in range(nb):
                        T[a, y, q] = acc[q]
            for a in range(n):
                for b in range(a, n):
                    for q in range(nb):
                        acc[q] = 0.0
                    for y in range(n):
                        for q in range(nb):
                            acc[q] += T[a, y, q] * Gi[b, y, q]
                    for q in range(nb):
                        DGI[i, a, b, q] = -acc[q]
                        DGI[i, b, a, q] = -acc[q]
        for i in range(n):
            for j in range(n):
                for q in range(nb):
                    acc[q] = 0.0
                for a in range(n):
                    for c in range(n):
                        i1 = pidx[i, a]
                        k1 = sidx[c, j]
                        i2 = pidx[i, j]
                        k2 = sidx[a, c]
                        for q in range(nb):
                            acc[q] += DGI[i, a, c, q] * GL[j, a, c, q] + Gi[a, c, q] * (
                                ddg[i1, k1, s0 + q] - 0.5 * ddg[i2, k2, s0 + q])
                for q in range(nb):
                    DW[i, j, q] = acc[q]
        if has_bg:
            for k in range(n):
                for q in range(nb):
                    V[k, q] = 0.0
                for a in range(n):
                    for c in range(n):
                        for q in range(nb):
                            V[k, q] += Gi[a, c, q] * bg_gamma[k, a, c, s0 + q]
                for q in range(nb):
                    W[k, q] -= V[k, q]
            for j in range(n):
                for k in range(n):
                    kk = sidx[j, k]
                    for q in range(nb):
                        WL[j, q] -= g[kk, s0 + q] * V[k, q]
            for i in range(n):
                for j in range(n):
                    for q in range(nb):
                        acc[q] = 0.0
                    for k in range(n):
                        kjk = sidx[j, k]
                        for q in range(nb):
                            f[q] = 0.0
                        for a in range(n):
                            for c in range(n):
                                for q in range(nb):
                                    f[q] += (DGI[i, a, c, q] * bg_gamma[k, a, c, s0 + q]
                                             + Gi[a, c, q] * bg_dgamma[i, k, a, c, s0 + q])
                        for q in range(nb):
                            acc[q] += dg[i, kjk, s0 + q] * V[k, q] + g[kjk, s0 + q] * f[q]
                    for q in range(nb):
                        DW[i, j, q] -= acc[q]
        for i in range(n):
            for q in range(nb):
                w_up_out[i, s0 + q] = W[i, q]
            for j in range(i, n):
                kk = sidx[i, j]
                for q in range(nb):
                    acc[q] = DW[i, j, q] + DW[j, i, q]
                for k in range(n):
                    for q in range(nb):
                        acc[q] -= (GU[k, i, j, q] + GU[k, j, i, q]) * WL[k, q]
                for q in range(nb):
                    rhs[kk, s0 + q] = -2.0 * RIC[i, j, q] + acc[q]


@njit(cache=True)
def neighbour_table(shape, half):
    """nbr[a, half + k, p]: flat index of p shifted by k cells along axis a (wrapped)."""
    n = len(shape)
    P = 1
    for s in shape:
        P *= s
    strides = np.empty(n, dtype=np.int64)
    acc = 1
    for a in range(n - 1, -1, -1):
        strides[a] = acc
        acc *= shape[a]
    nbr = np.empty((n, 2 * half + 1, P), dtype=np.int64)
    for p in range(P):
        for a in range(n):
            i = (p // strides[a]) % shape[a]
            base = p - i * strides[a]
            for k in range(-half, half + 1):
                nbr[a, half + k, p] = base + ((i + k) % shape[a]) * strides[a]
    return nbr


@njit(cache=True, fastmath=True, error_model="numpy")
def derivative_kernel(f, nbr, w1, w2, inv_h, dg, ddg):
    """First derivatives dg (n, m, P) and second derivatives ddg (npairs, m, P), a <= b.

    ``f`` is (m, P). Same paired stencils as :func:`ricci_lab.grid.d1` / ``d2``;
    mixed derivatives apply the first-derivative stencil to the first derivatives.
    """
    n = nbr.shape[0]
    half = w1.shape[0]
    m, P = f.shape
    q = 0
    for a in range(n):
        for c in range(m):
            for p in range(P):
                f0 = f[c, p]
                s1 = 0.0
                s2 = 0.0
                for k in range(1, half + 1):
                    fp = f[c, nbr[a, half + k, p]]
                    fm = f[c, nbr[a, half - k, p]]
                    s1 += w1[k - 1] * (fp - fm)
                    s2 += w2[k - 1] * ((fp - f0) + (fm - f0))
                dg[a, c, p] = s1 * inv_h[a]
                ddg[q, c, p] = s2 * inv_h[a] * inv_h[a]
        q += n - a
    q = 0
    for a in range(n):
        q += 1
        for b in range(a + 1, n):
            for c in range(m):
                for p in range(P):
                    s = 0.0
                    for k in range(1, half + 1):
                        s += w1[k - 1] * (dg[a, c, nbr[b, half + k, p]] - dg[a, c, nbr[b, half - k, p]])
                    ddg[q, c, p] = s * inv_h[b]
            q += 1
