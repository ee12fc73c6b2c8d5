"""Scalar curvature of e^{2u} delta against the closed-form conformal oracle.

Prints the max-norm relative error for the 2nd- and 4th-order stencils and the
ratio under grid doubling.

    python3 demos/conformal_oracle.py
"""
import numpy as np

from ricci_lab.curvature import conformal_scalar_oracle, curvature
from ricci_lab.grid import MetricField, PeriodicGrid, ScalarField


def relative_error(N, order, eps=0.01):
    grid = PeriodicGrid.cubic(3, N, 1.0)
    u = ScalarField(grid, eps * np.sin(2 * np.pi * grid.coords()[0]))
    R = curvature(MetricField.conformal(u), order=order, with_riemann=False).scalar.values
    O = conformal_scalar_oracle(u).values
    return np.abs(R - O).max() / np.abs(O).max()


def main():
    print("order    N   rel. error   ratio")
    for order in (2, 4):
        prev = None
        for N in (16, 32, 64):
            err = relative_error(N, order)
            ratio = f"{prev / err:7.2f}" if prev else "      -"
            print(f"{order:5d} {N:4d}   {err:.3e}  {ratio}")
            prev = err


if __name__ == "__main__":
    main()
