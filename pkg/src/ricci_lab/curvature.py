"""Christoffel symbols and curvature tensors of a metric on a periodic grid.

Index conventions: ``dg[a, i, j] = d_a g_ij``, ``ddg[a, b, i, j] = d_a d_b g_ij``,
``gamma_low[k, i, j] = Gamma_{k,ij}`` (first kind) and ``gamma[k, i, j] =
Gamma^k_ij``. Riemann is the (0,4) tensor with Ric_bd = g^ac R_abcd, positive
on round spheres.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    ChristoffelField,
    MetricField,
    ScalarField,
    SymTensorField,
    _check_order,
    d1,
    d2,
    sym_index,
    sym_pairs,
    unpack_sym,
)


def metric_derivatives(packed, spacing, order=4):
    """First and second derivatives of a packed metric, expanded to full index form.

    Mixed second derivatives compose two first-derivative stencils, diagonal
    ones use the compact second-derivative stencil.
    """
    n = len(spacing)
    idx = sym_index(n)
    dgp = [d1(packed, a, spacing[a], order, ndim=n) for a in range(n)]
    ddgp = [[None] * n for _ in range(n)]
    for a in range(n):
        ddgp[a][a] = d2(packed, a, spacing[a], order, ndim=n)
        for b in range(a + 1, n):
            ddgp[a][b] = ddgp[b][a] = d1(dgp[a], b, spacing[b], order, ndim=n)
    dg = np.stack([p[idx] for p in dgp])
    ddg = np.stack([np.stack([ddgp[a][b][idx] for b in range(n)]) for a in range(n)])
    return dg, ddg


def christoffel_arrays(ginv, dg):
    """(Gamma^k_ij, Gamma_{k,ij}) from the inverse metric and d_a g_ij."""
    gamma_low = 0.5 * (
        np.einsum("ijk...->kij...", dg) + np.einsum("jik...->kij...", dg) - dg
    )
    gamma = np.einsum("kl...,lij...->kij...", ginv, gamma_low)
    return gamma, gamma_low


def ricci_arrays(ginv, ddg, gamma, gamma_low):
    """Ricci tensor from second derivatives and Christoffel symbols."""
    a_term = np.einsum("ac...,bcad...->bd...", ginv, ddg)
    c_term = np.einsum("ac...,acbd...->bd...", ginv, ddg)
    d_term = np.einsum("ac...,bdac...->bd...", ginv, ddg)
    principal = 0.5 * (a_term + np.swapaxes(a_term, 0, 1) - c_term - d_term)
    x = np.einsum("ac...,ebc...->eba...", ginv, gamma)
    q1 = np.einsum("eba...,ead...->bd...", x, gamma_low)
    trace_low = np.einsum("ac...,eac...->e...", ginv, gamma_low)
    q2 = np.einsum("ebd...,e...->bd...", gamma, trace_low)
    ric = principal + q1 - q2
    return 0.5 * (ric + np.swapaxes(ric, 0, 1))


def riemann_arrays(ddg, gamma, gamma_low):
    """R_abcd from the classical second-derivative formula."""
    second = 0.5 * (
        np.einsum("bcad...->abcd...", ddg)
        + np.einsum("adbc...->abcd...", ddg)
        - np.einsum("bdac...->abcd...", ddg)
        - np.einsum("acbd...->abcd...", ddg)
    )
    quad = np.einsum("fbc...,fad...->abcd...", gamma_low, gamma) - np.einsum(
        "fbd...,fac...->abcd...", gamma_low, gamma
    )
    return second + quad


def rm_norm_array(ginv, riemann):
    """|Rm| with all four indices raised by g."""
    up = np.einsum("ae...,ebcd...->abcd...", ginv, riemann)
    up = np.einsum("bf...,afcd...->abcd...", ginv, up)
    up = np.einsum("cg...,abgd...->abcd...", ginv, up)
    up = np.einsum("dh...,abch...->abcd...", ginv, up)
    sq = np.einsum("abcd...,abcd...->...", riemann, up)
    return np.sqrt(np.maximum(sq, 0.0))


def inverse_full(packed, n):
    full = unpack_sym(packed, n)
    shape = full.shape[2:]
    mats = np.moveaxis(full.reshape(n, n, -1), -1, 0)
    inv = np.linalg.inv(mats)
    return np.moveaxis(inv, 0, -1).reshape((n, n) + shape)


@dataclass
class CurvatureBundle:
    christoffel: ChristoffelField
    ricci: SymTensorField
    scalar: ScalarField
    riemann: np.ndarray | None = None
    rm_norm: ScalarField | None = None

    @property
    def grid(self):
        return self.scalar.grid


def christoffel(g: MetricField, order=4) -> ChristoffelField:
    """Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)."""
    _check_order(order)
    grid = g.grid
    dg = np.stack([d1(g.values, a, grid.spacing[a], order, ndim=grid.n) for a in range(grid.n)])
    dg = dg[:, sym_index(grid.n)]
    gamma, _ = christoffel_arrays(g.inverse_full(), dg)
    return ChristoffelField.from_full(grid, gamma)


def curvature_arrays(packed, spacing, order=4, ginv=None, with_riemann=True):
    """Raw curvature pipeline on a packed metric array (no validation).

    Returns a dict with gamma, gamma_low, ricci, scalar and, when requested,
    riemann and rm_norm. Usable on small non-periodic patches as long as only
    points two cells away from the patch boundary are read.
    """
    n = len(spacing)
    if ginv is None:
        ginv = inverse_full(packed, n)
    dg, ddg = metric_derivatives(packed, spacing, order)
    gamma, gamma_low = christoffel_arrays(ginv, dg)
    ric = ricci_arrays(ginv, ddg, gamma, gamma_low)
    out = {
        "gamma": gamma,
        "gamma_low": gamma_low,
        "ricci": ric,
        "scalar": np.einsum("bd...,bd...->...", ginv, ric),
        "dg": dg,
        "ddg": ddg,
    }
    if with_riemann:
        rm = riemann_arrays(ddg, gamma, gamma_low)
        out["riemann"] = rm
        out["rm_norm"] = rm_norm_array(ginv, rm)
    return out


def curvature(g: MetricField, order=4, with_riemann=True) -> CurvatureBundle:
    """Full curvature bundle of ``g``.

    ``with_riemann=False`` skips the (0,4) tensor and |Rm|, which dominate
    memory on large grids.
    """
    _check_order(order)
    grid = g.grid
    arrs = curvature_arrays(g.values, grid.spacing, order, g.inverse_full(), with_riemann)
    return CurvatureBundle(
        christoffel=ChristoffelField.from_full(grid, arrs["gamma"]),
        ricci=SymTensorField.from_full(grid, arrs["ricci"]),
        scalar=ScalarField(grid, arrs["scalar"]),
        riemann=arrs.get("riemann"),
        rm_norm=ScalarField(grid, arrs["rm_norm"]) if with_riemann else None,
    )


def scalar_curvature(g: MetricField, order=4) -> ScalarField:
    return curvature(g, order, with_riemann=False).scalar


def conformal_scalar_oracle(u: ScalarField, n=None, order=4) -> ScalarField:
    """Scalar curvature of e^{2u} delta from the conformal-change formula.

    R = e^{-2u} (-2(n-1) lap u - (n-1)(n-2) |grad u|^2), with Euclidean
    derivatives of u taken by central differences.
    """
    grid = u.grid
    n = grid.n if n is None else n
    if n != grid.n:
        raise ValueError(f"dimension {n} does not match grid dimension {grid.n}")
    lap = np.zeros(grid.shape)
    grad2 = np.zeros(grid.shape)
    for a in range(n):
        lap += d2(u.values, a, grid.spacing[a], order)
        grad2 += d1(u.values, a, grid.spacing[a], order) ** 2
    vals = np.exp(-2.0 * u.values) * (-2.0 * (n - 1) * lap - (n - 1) * (n - 2) * grad2)
    return ScalarField(grid, vals)


def bianchi_residual(riemann):
    """max |R_ijkl + R_iklj + R_iljk|."""
    r = riemann
    res = r + np.einsum("iklj...->ijkl...", r) + np.einsum("iljk...->ijkl...", r)
    return float(np.abs(res).max())


def symmetry_residuals(riemann):
    r = riemann
    return {
        "antisym_ij": float(np.abs(r + np.swapaxes(r, 0, 1)).max()),
        "antisym_kl": float(np.abs(r + np.swapaxes(r, 2, 3)).max()),
        "pair_swap": float(np.abs(r - np.einsum("klij...->ijkl...", r)).max()),
        "bianchi": bianchi_residual(r),
    }


__all__ = [
    "CurvatureBundle",
    "christoffel",
    "curvature",
    "scalar_curvature",
    "conformal_scalar_oracle",
    "symmetry_residuals",
    "sym_pairs",
]
