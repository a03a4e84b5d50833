"""Stationary incompressible channel flow with inflow control.

Dimensionless Navier-Stokes on [0, lx] x [0, ly]: controlled inflow
velocity (c(y), 0), a vertical cross-flow (0, 0.3) blown in through a
bottom-wall slot and sucked out through a top-wall slot, no-slip walls,
and a zero-Neumann outflow with pinned pressure. The cost penalizes the
outflow's deviation from the parabolic profile 4 y (1 - y) / ly^2.

The forward solver linearizes the advection term k times (each
"refinement" freezes the advecting velocity) and drives each linearized
problem to steady state with pseudo-time projection sub-iterations:
implicit tentative momentum solve without pressure, pressure Poisson
solve from the tentative divergence, velocity correction.

The whole pipeline is written over the autodiff op layer, so calling it
with a plain control vector runs pure numpy, while calling it with a
tape Var records every step (all k refinements unrolled) for exact
reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as au
from ..autodiff import value_of
from ..cloud import BCKind, PointCloud, make_channel_cloud
from ..errors import NonConvergenceError
from ..rbf import (
    BoundaryCondition,
    Factorized,
    InteriorOperator,
    RbfConfig,
    assemble_system,
    eval_rows,
    grad_rows,
    interpolation_factorization,
)
from .common import ControlProfile, cell_weights

VELOCITY_DIRICHLET = ("inflow", "walls", "blowing", "suction")


def target_outflow(y, ly: float = 1.0):
    """Desired outflow profile 4 y (1 - y) / ly^2."""
    y = np.asarray(y, dtype=float)
    return 4.0 * y * (1.0 - y) / ly**2


@dataclass
class FlowState:
    """Nodal velocity/pressure fields plus projection diagnostics."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    divergence_rms: list[float] = field(default_factory=list)
    update_norms: list[float] = field(default_factory=list)
    subiters: list[int] = field(default_factory=list)
    converged: bool = True

    @property
    def last_update_norm(self) -> float:
        return self.update_norms[-1] if self.update_norms else float("nan")


class NavierStokesProblem:
    """Channel cloud, flow parameters, and cached collocation operators."""

    def __init__(self, cloud: PointCloud, re: float = 100.0,
                 lx: float = 1.5, ly: float = 1.0, k: int = 3,
                 dt: float = 1e-2, tol: float = 1e-6,
                 max_subiters: int = 2000, fixed_subiters: int | None = None,
                 crossflow: float = 0.3, cfg: RbfConfig = RbfConfig(),
                 control: ControlProfile | None = None):
        if k < 1:
            raise ValueError("refinement count k must be >= 1")
        if re <= 0:
            raise ValueError("Reynolds number must be positive")
        self.cloud = cloud
        self.re = float(re)
        self.lx, self.ly = float(lx), float(ly)
        self.k = int(k)
        self.dt = float(dt)
        self.tol = float(tol)
        self.max_subiters = int(max_subiters)
        self.fixed_subiters = fixed_subiters
        self.crossflow = float(crossflow)
        self.cfg = cfg
        self._build_operators()
        self.control = control if control is not None \
            else self.parabolic_control()

    @classmethod
    def generate(cls, target_count: int = 1385, seed: int = 0, **kw):
        lx = kw.pop("lx", 1.5)
        ly = kw.pop("ly", 1.0)
        cloud = make_channel_cloud(lx, ly, target_count, seed=seed)
        return cls(cloud, lx=lx, ly=ly, **kw)

    def _build_operators(self):
        cloud, cfg = self.cloud, self.cfg
        n = cloud.n
        self.int_idx = cloud.indices_of_kind(BCKind.INTERNAL)
        self.in_idx = cloud.segment_indices("inflow")
        self.out_idx = cloud.segment_indices("outflow")
        self.wall_idx = cloud.segment_indices("walls")
        self.blow_idx = cloud.segment_indices("blowing")
        self.suck_idx = cloud.segment_indices("suction")

        mom_bc = {seg: BoundaryCondition(BCKind.DIRICHLET, 0.0)
                  for seg in VELOCITY_DIRICHLET}
        mom_bc["outflow"] = BoundaryCondition(BCKind.NEUMANN, 0.0)
        mom = assemble_system(
            cloud,
            InteriorOperator(identity=1.0 / self.dt, laplace=-1.0 / self.re),
            mom_bc, cfg=cfg)
        self.disc = mom.disc
        self.n_rows = self.disc.n_rows
        self.pde_rows = self.disc.pde_row_of_node
        self.a_momentum_base = mom.matrix

        prs_bc = {seg: BoundaryCondition(BCKind.NEUMANN, 0.0)
                  for seg in VELOCITY_DIRICHLET}
        prs_bc["outflow"] = BoundaryCondition(BCKind.DIRICHLET, 0.0)
        prs = assemble_system(cloud, InteriorOperator(laplace=1.0),
                              prs_bc, cfg=cfg, disc=self.disc)
        self.fact_pressure = Factorized(prs.matrix)
        self.fact_fit = interpolation_factorization(cloud, cfg)

        centers = self.disc.centers
        self.e_all = eval_rows(cloud.coords, centers, cfg)
        gx, gy = grad_rows(cloud.coords, centers, cfg)
        self.gx_all, self.gy_all = gx, gy
        self.gx_int = gx[self.int_idx]
        self.gy_int = gy[self.int_idx]
        # derivative rows of the co-located fit basis (divergence measure)
        fx, fy = grad_rows(cloud.coords[self.int_idx], cloud.coords, cfg)
        self.gx_fit_int, self.gy_fit_int = fx, fy

        dirichlet = np.concatenate([self.in_idx, self.wall_idx,
                                    self.blow_idx, self.suck_idx])
        self.free_mask = np.ones(n)
        self.free_mask[dirichlet] = 0.0

        self.v_pin = np.zeros(n)
        self.v_pin[self.blow_idx] = self.crossflow
        self.v_pin[self.suck_idx] = self.crossflow
        self.rhs_v_const = np.zeros(self.n_rows)
        self.rhs_v_const[self.blow_idx] = self.crossflow
        self.rhs_v_const[self.suck_idx] = self.crossflow

        out_y = cloud.coords[self.out_idx, 1]
        self.out_weights = cell_weights(out_y, 0.0, self.ly)
        self.u_target_out = target_outflow(out_y, self.ly)

    @property
    def n_control(self) -> int:
        return len(self.in_idx)

    def parabolic_control(self) -> ControlProfile:
        y = self.cloud.coords[self.in_idx, 1]
        return ControlProfile(target_outflow(y, self.ly), self.in_idx)

    def zero_control(self) -> ControlProfile:
        return ControlProfile(np.zeros(self.n_control), self.in_idx)

    # pipeline ---------------------------------------------------------

    def momentum_matrix(self, u_nodes, v_nodes):
        """Momentum operator with advection frozen at the given field.

        The advecting velocity scales the gradient rows of every PDE
        row (interior nodes and the extra boundary-node rows alike).
        """
        a = au.add_rows_scaled(self.a_momentum_base, self.pde_rows,
                               u_nodes, self.gx_all)
        return au.add_rows_scaled(a, self.pde_rows, v_nodes, self.gy_all)

    def run_projection(self, c, diagnostics: FlowState | None = None):
        """k frozen-advection refinements, each projected to steady state.

        `c` may be a plain array (pure numpy evaluation) or a tape Var
        (records the unrolled iteration). Returns nodal (u, v, p).
        """
        n = self.cloud.n
        pin_u = au.scatter(c, self.in_idx, n)
        rhs_u_c = au.scatter(c, self.in_idx, self.n_rows)
        u = pin_u
        v = self.v_pin
        p_coeffs = np.zeros(self.n_rows)
        for refinement in range(self.k):
            a = self.momentum_matrix(u, v)
            if not isinstance(a, au.Var):
                a = Factorized(a)
            u, v, p_coeffs = self._project_to_steady(
                a, u, v, rhs_u_c, pin_u, refinement, diagnostics)
        p = au.matvec(self.e_all, p_coeffs)
        return u, v, p

    def _project_to_steady(self, a, u, v, rhs_u_c, pin_u, refinement,
                           diagnostics):
        inv_dt = 1.0 / self.dt
        limit = self.fixed_subiters or self.max_subiters
        growth_run = 0
        prev_norm = np.inf
        it = 0
        p_coeffs = np.zeros(self.n_rows)
        for it in range(1, limit + 1):
            rhs_u = au.add(au.scatter(au.mul(u, inv_dt),
                                      self.pde_rows, self.n_rows), rhs_u_c)
            rhs_v = au.add(au.scatter(au.mul(v, inv_dt),
                                      self.pde_rows, self.n_rows),
                           self.rhs_v_const)
            cu = au.linear_solve(a, rhs_u)
            cv = au.linear_solve(a, rhs_v)
            div_all = au.add(au.matvec(self.gx_all, cu),
                             au.matvec(self.gy_all, cv))
            rhs_p = au.scatter(au.mul(div_all, inv_dt),
                               self.pde_rows, self.n_rows)
            p_coeffs = au.linear_solve(self.fact_pressure, rhs_p)
            u_star = au.matvec(self.e_all, cu)
            v_star = au.matvec(self.e_all, cv)
            u_corr = au.sub(u_star, au.mul(au.matvec(self.gx_all, p_coeffs),
                                           self.dt))
            v_corr = au.sub(v_star, au.mul(au.matvec(self.gy_all, p_coeffs),
                                           self.dt))
            u_new = au.add(au.mul(u_corr, self.free_mask), pin_u)
            v_new = au.add(au.mul(v_corr, self.free_mask), self.v_pin)

            norm = max(
                float(np.max(np.abs(value_of(u_new) - value_of(u)))),
                float(np.max(np.abs(value_of(v_new) - value_of(v)))))
            u, v = u_new, v_new

            if diagnostics is not None:
                diagnostics.update_norms.append(norm)
                diagnostics.divergence_rms.append(
                    self.divergence_rms(value_of(u), value_of(v)))

            growth_run = growth_run + 1 if norm > prev_norm else 0
            prev_norm = norm
            if growth_run >= 10 and norm > 1e3 * self.tol:
                raise NonConvergenceError(
                    f"projection diverging at refinement {refinement}, "
                    f"sub-iteration {it} (update norm {norm:.3e})",
                    diagnostics={"refinement": refinement, "subiter": it,
                                 "norm": norm})
            if self.fixed_subiters is None and norm < self.tol:
                break
        if diagnostics is not None:
            diagnostics.subiters.append(it)
            diagnostics.converged = (self.fixed_subiters is not None
                                     or prev_norm < self.tol)
        return u, v, p_coeffs

    def divergence_rms(self, u_nodes, v_nodes) -> float:
        """RMS interior divergence of the refit nodal velocity field."""
        rhs_u = np.concatenate([u_nodes, np.zeros(self.cfg.n_poly)])
        rhs_v = np.concatenate([v_nodes, np.zeros(self.cfg.n_poly)])
        cu = self.fact_fit.solve(rhs_u)
        cv = self.fact_fit.solve(rhs_v)
        div = self.gx_fit_int @ cu + self.gy_fit_int @ cv
        return float(np.sqrt(np.mean(div * div)))

    def cost_from_nodal(self, u, v):
        """Outflow-profile cost from nodal fields (array or Var)."""
        du = au.sub(au.take(u, self.out_idx), self.u_target_out)
        v_out = au.take(v, self.out_idx)
        return au.mul(au.add(au.dot(self.out_weights, au.mul(du, du)),
                             au.dot(self.out_weights, au.mul(v_out, v_out))),
                      0.5)

    def boundary_flux_balance(self, u, v) -> tuple[float, float]:
        """(net outward flux, inflow flux) integrated over the boundary."""
        coords = self.cloud.coords
        flux = 0.0
        for idx in (self.in_idx, self.out_idx, self.wall_idx,
                    self.blow_idx, self.suck_idx):
            if len(idx) == 0:
                continue
            nrm = self.cloud.normals[idx]
            un = u[idx] * nrm[:, 0] + v[idx] * nrm[:, 1]
            horizontal = np.all(np.abs(nrm[:, 0]) > 0.5)
            pos = coords[idx, 1] if horizontal else coords[idx, 0]
            span = (0.0, self.ly) if horizontal else (0.0, self.lx)
            w = cell_weights(pos, *span)
            flux += float(w @ un)
        w_in = cell_weights(coords[self.in_idx, 1], 0.0, self.ly)
        inflow = float(w_in @ u[self.in_idx])
        return flux, inflow


def ns_forward(problem: NavierStokesProblem,
               control: ControlProfile | None = None,
               diagnostics: bool = True) -> FlowState:
    """Plain-numpy forward solve returning the nodal steady state."""
    control = control or problem.control
    state = FlowState(u=None, v=None, p=None) if diagnostics else None
    u, v, p = problem.run_projection(np.asarray(control.values, float),
                                     diagnostics=state)
    if state is None:
        state = FlowState(u=u, v=v, p=p)
    else:
        state.u, state.v, state.p = u, v, p
    if not np.all(np.isfinite(u)) or not np.all(np.isfinite(v)):
        raise NonConvergenceError("non-finite velocity field",
                                  diagnostics={"norms": state.update_norms[-5:]})
    return state


def ns_cost(state: FlowState, problem: NavierStokesProblem) -> float:
    """Quadrature of the outflow mismatch for a solved state."""
    return float(value_of(problem.cost_from_nodal(state.u, state.v)))


def ns_cost_from_control(problem: NavierStokesProblem, c):
    """End-to-end cost J(c); records on a tape when c is a Var."""
    u, v, _ = problem.run_projection(c)
    return problem.cost_from_nodal(u, v)
