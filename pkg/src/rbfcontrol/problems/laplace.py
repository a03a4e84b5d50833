"""Boundary control of the Laplace equation on the unit square.

The state is harmonic with Dirichlet data on all four walls: the
control c on the top wall, sin(2 pi x) on the bottom, and the matching
side profile of the closed-form optimum on the left/right walls. The
cost penalizes the mismatch between the top-wall flux du/dy(x, 1) and
cos(2 pi x); the closed-form control below drives it to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as au
from ..cloud import BCKind, PointCloud, make_unit_square_grid
from ..rbf import (
    BoundaryCondition,
    Discretization,
    Factorized,
    InteriorOperator,
    Interpolant,
    RbfConfig,
    assemble_system,
    grad_rows,
    make_interpolant,
)
from .common import ControlProfile, trapezoid_weights

TWO_PI = 2.0 * np.pi


def laplace_exact_control(x):
    """Closed-form optimal top-wall potential."""
    x = np.asarray(x, dtype=float)
    return (np.sin(TWO_PI * x) / np.cosh(TWO_PI)
            + np.tanh(TWO_PI) * np.cos(TWO_PI * x) / TWO_PI)


def laplace_exact_state(x, y):
    """Closed-form optimal state; harmonic, equals the control at y = 1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sech = 1.0 / np.cosh(TWO_PI)
    term1 = 0.5 * sech * np.sin(TWO_PI * x) * (
        np.exp(TWO_PI * (y - 1.0)) + np.exp(TWO_PI * (1.0 - y)))
    term2 = (sech / (4.0 * np.pi)) * np.cos(TWO_PI * x) * (
        np.exp(TWO_PI * y) - np.exp(-TWO_PI * y))
    return term1 + term2


def laplace_side_profile(y):
    """Side-wall trace of the optimal state (x = 0 and x = 1)."""
    y = np.asarray(y, dtype=float)
    return np.sinh(TWO_PI * y) / (TWO_PI * np.cosh(TWO_PI))


def laplace_bottom(x):
    return np.sin(TWO_PI * np.asarray(x, dtype=float))


def laplace_flux_target(x):
    return np.cos(TWO_PI * np.asarray(x, dtype=float))


@dataclass
class LaplaceProblem:
    """Grid, boundary data, and cached operators for the benchmark.

    Building the problem assembles and factorizes the collocation
    matrix once; forward solves, adjoint solves, and recorded gradient
    pipelines all reuse the factorization.
    """

    grid: PointCloud
    config: RbfConfig
    disc: Discretization
    fact: Factorized
    rhs_base: np.ndarray
    top_idx: np.ndarray
    top_weights: np.ndarray
    flux_rows: np.ndarray
    flux_target: np.ndarray

    @classmethod
    def on_grid(cls, nx: int, ny: int, cfg: RbfConfig = RbfConfig()):
        grid = make_unit_square_grid(nx, ny)
        return cls.on_cloud(grid, cfg)

    @classmethod
    def on_cloud(cls, grid: PointCloud, cfg: RbfConfig = RbfConfig()):
        bc = {
            "top": BoundaryCondition(BCKind.DIRICHLET, 0.0),
            "bottom": BoundaryCondition(BCKind.DIRICHLET,
                                        lambda x, y: laplace_bottom(x)),
            "left": BoundaryCondition(BCKind.DIRICHLET,
                                      lambda x, y: laplace_side_profile(y)),
            "right": BoundaryCondition(BCKind.DIRICHLET,
                                       lambda x, y: laplace_side_profile(y)),
        }
        system = assemble_system(grid, InteriorOperator(laplace=1.0), bc,
                                 source=0.0, cfg=cfg)
        top_idx = grid.segment_indices("top")
        top_x = grid.coords[top_idx, 0]
        _, gy = grad_rows(grid.coords[top_idx], system.disc.centers, cfg)
        return cls(
            grid=grid,
            config=cfg,
            disc=system.disc,
            fact=Factorized(system.matrix),
            rhs_base=system.rhs,
            top_idx=top_idx,
            top_weights=trapezoid_weights(top_x),
            flux_rows=gy,
            flux_target=laplace_flux_target(top_x),
        )

    @property
    def n_control(self) -> int:
        return len(self.top_idx)

    def zero_control(self) -> ControlProfile:
        return ControlProfile(np.zeros(self.n_control), self.top_idx)

    def exact_control(self) -> ControlProfile:
        return ControlProfile(laplace_exact_control(self.grid.coords[self.top_idx, 0]),
                              self.top_idx)

    def solve_coeffs(self, c):
        """Expansion coefficients for control c (array or tape Var)."""
        rhs = au.add(au.scatter(c, self.top_idx, len(self.rhs_base)),
                     self.rhs_base)
        return au.linear_solve(self.fact, rhs)

    def flux(self, coeffs):
        """Top-wall du/dy for solved coefficients (array or tape Var)."""
        return au.matvec(self.flux_rows, coeffs)

    def cost_from_control(self, c):
        """Quadrature cost J(c); records on a tape when c is a Var."""
        mismatch = au.sub(self.flux(self.solve_coeffs(c)), self.flux_target)
        return au.dot(self.top_weights, au.mul(mismatch, mismatch))


def laplace_forward(problem: LaplaceProblem, control) -> Interpolant:
    """Collocation solution of the state for a given top-wall control."""
    values = control.values if isinstance(control, ControlProfile) \
        else np.asarray(control, dtype=float)
    if len(values) != problem.n_control:
        raise ValueError("control length does not match top-wall nodes")
    coeffs = problem.solve_coeffs(values)
    return make_interpolant(coeffs, problem.disc)


def laplace_cost(state: Interpolant, problem: LaplaceProblem) -> float:
    """Trapezoid quadrature of the squared top-wall flux mismatch."""
    flux = problem.flux_rows @ state.coeffs
    mismatch = flux - problem.flux_target
    return float(problem.top_weights @ (mismatch * mismatch))
