"""Receding-horizon planner: operator splitting between task and safety.

Each cycle solves

    min  task costs (y)  +  repulsive cost and hard limits (z)
    s.t. y dynamics-feasible,  G y = z

by alternating a proximal optimal-control solve for y (the task subproblem),
independent per-timestep projections/QPs for z (the safety subproblems), and
a dual update, until the splitting residual ||G y - z||_inf is small.  G
selects all control and state blocks, so the z problems are one box clamp
per control and one small QP per state.

Modes:
  tompc  task-oriented planner: relaxation + repulsive field + hard rows
  oampc  same splitting but without relaxation and repulsion
  fddp   single-solver baseline: penalty-based avoidance, no QPs at all
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .collision import (CollisionWorld, LinearizedDistances,
                        assemble_constraints, linearize_distances)
from .costs import (CycleReferences, RepulsiveField, TaskObjective,
                    TaskWeights, build_repulsive_field, goal_relaxation)
from .interaction import InteractionModel
from .robot import RobotModel, gravity_torque, step, step_derivatives
from .solvers import (OCProblem, ProximalTerm, QPProblem, clamp_controls,
                      ddp_solve, solve_qp)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 30
    dt: float = 0.05
    rho: float = 10.0
    residual_tol: float = 1e-3
    max_admm_iters: int = 20
    max_ddp_iters: int = 5
    fddp_max_iters: int = 30
    qp_max_iters: int = 50
    # cost-improvement exit for the task subproblem; the splitting only
    # needs an approximate minimizer per sweep, so this is much looser
    # than a standalone solve would use
    inner_tol: float = 1e-4
    # dynamics derivatives are reused while the trajectory stays within
    # this distance of the point they were computed at; consecutive sweeps
    # move the iterate by far less once the splitting is nearly settled
    deriv_reuse_tol: float = 5e-3
    # extra clearance added to d_active in the linearized rows; absorbs
    # linearization and tracking error so the closed loop stays outside
    # the true activation distance
    constraint_margin: float = 0.002
    mode: str = "tompc"
    frame: str = "ee"
    weights: TaskWeights = field(default_factory=TaskWeights)

    def __post_init__(self):
        assert self.mode in ("tompc", "oampc", "fddp")
        assert self.horizon >= 1 and self.dt > 0 and self.rho > 0

    @staticmethod
    def from_dict(obj: dict) -> "PlannerConfig":
        kw = dict(obj)
        if "weights" in kw:
            kw["weights"] = TaskWeights.from_dict(kw["weights"])
        return PlannerConfig(**kw)


@dataclass(frozen=True)
class ProjectionMap:
    """Selection G of the trajectory blocks coupled to the safety problems.

    Identity over every control u_t and every non-initial state x_{t+1};
    apply() stacks them in that order.
    """

    T: int
    nx: int
    nu: int

    def apply(self, xs: np.ndarray, us: np.ndarray):
        return us.copy(), xs[1:].copy()

    def residual(self, xs, us, z_u, z_x) -> float:
        ru = float(np.abs(us - z_u).max()) if z_u.size else 0.0
        rx = float(np.abs(xs[1:] - z_x).max()) if z_x.size else 0.0
        return max(ru, rx)


@dataclass
class ADMMState:
    """Carried across cycles so consecutive solves warm start each other."""

    y_xs: np.ndarray
    y_us: np.ndarray
    z_x: np.ndarray
    z_u: np.ndarray
    lam_x: np.ndarray
    lam_u: np.ndarray
    qp_active: list
    initialized: bool = False


@dataclass(frozen=True)
class PlannerOutput:
    q_des: np.ndarray
    qd_des: np.ndarray
    tau_ff: np.ndarray
    xs: np.ndarray
    us: np.ndarray
    iterations: int
    residual: float
    min_distance: float
    relax: float
    cost: float
    solve_time_us: float
    mode: str
    cycle_index: int
    lin: LinearizedDistances = None
    constraint_rows: tuple = None  # (C, lower) active this cycle


def _worker_count(T: int) -> int:
    env = os.environ.get("TOMPC_THREADS", "").strip()
    n = int(env) if env else 1
    return max(1, min(n, T))


class Planner:
    """Stateful receding-horizon planner bound to one model and world."""

    def __init__(self, model: RobotModel, world: CollisionWorld,
                 config: PlannerConfig, interaction: InteractionModel = None):
        self.model = model
        self.world = world
        self.config = config
        self.interaction = interaction
        self.state: ADMMState = None
        self.cycle_index = 0
        self.qp_solve_count = 0
        self._clear_streak = 0
        self._workers = _worker_count(config.horizon)
        self._gmap = ProjectionMap(config.horizon, 2 * model.nq, model.nq)

    def reset(self):
        self.state = None
        self.cycle_index = 0
        self.qp_solve_count = 0
        self._clear_streak = 0

    # -- subproblem helpers -------------------------------------------------

    def _oc_problem(self, objective: TaskObjective) -> OCProblem:
        model, cfg, inter = self.model, self.config, self.interaction
        # Single-slot caches keyed by stage: consecutive ADMM sweeps re-solve
        # the task subproblem around a trajectory that often has not moved,
        # in which case the stage derivatives and expansions are identical
        # (the proximal terms are added downstream and do not enter these).
        deriv_slot = {}
        expan_slot = {}
        cost_slot = {}

        def dyn(t, x, u):
            return step(model, x, u, cfg.dt, inter)

        dtol = cfg.deriv_reuse_tol

        def dderiv(t, x, u):
            hit = deriv_slot.get(t)
            if hit is not None:
                x0, u0, out = hit
                if (np.abs(x - x0).max() < dtol
                        and np.abs(u - u0).max() < dtol):
                    return out
            out = step_derivatives(model, x, u, cfg.dt, inter)
            deriv_slot[t] = (x.copy(), u.copy(), out)
            return out

        def stage_cost(t, x, u):
            key = (x.tobytes(), u.tobytes())
            hit = cost_slot.get(t)
            if hit is not None and hit[0] == key:
                return hit[1]
            out = objective.stage_cost(t, x, u)
            cost_slot[t] = (key, out)
            return out

        def stage_expansion(t, x, u):
            key = (x.tobytes(), u.tobytes())
            hit = expan_slot.get(t)
            if hit is not None and hit[0] == key:
                return hit[1]
            out = objective.stage_expansion(t, x, u)
            expan_slot[t] = (key, out)
            return out

        return OCProblem(2 * model.nq, model.nq, cfg.horizon, dyn, dderiv,
                         stage_cost, stage_expansion,
                         objective.terminal_cost, objective.terminal_expansion)

    def _z_step(self, y_xs, y_us, lam_x, lam_u, rep: RepulsiveField,
                C, lower, qp_active):
        model, cfg = self.model, self.config
        n = model.nq
        T = cfg.horizon
        rho = cfg.rho
        x_lo, x_hi = model.state_bounds()
        z_u = clamp_controls(y_us + lam_u / rho, -model.tau_max, model.tau_max)
        z_x = np.empty((T, 2 * n))
        have_rows = C is not None and C.shape[0] > 0
        Cx = np.hstack([C, np.zeros_like(C)]) if have_rows else None
        H = rho * np.eye(2 * n)
        if rep is not None:
            H[n:, n:] += rep.H

        def solve_one(t):
            v = y_xs[t + 1] + lam_x[t] / rho
            g = -rho * v
            if rep is not None:
                g[n:] += rep.g0
            prob = QPProblem(H, g, x_lo, x_hi, Cx, lower if have_rows else None)
            sol = solve_qp(prob, warm_active=qp_active[t],
                           max_iter=cfg.qp_max_iters)
            return t, sol

        self.qp_solve_count += T
        if self._workers > 1:
            with ThreadPoolExecutor(max_workers=self._workers) as ex:
                results = list(ex.map(solve_one, range(T)))
        else:
            results = [solve_one(t) for t in range(T)]
        for t, sol in results:
            z_x[t] = sol.z
            qp_active[t] = sol.active_set
        return z_x, z_u

    def _rows_ok(self, y_xs, C, lower, tol: float = 1e-6) -> bool:
        if C is None:
            return True
        n = self.model.nq
        vals = y_xs[1:, :n] @ C.T
        return bool(np.all(vals >= lower[None, :] - tol))

    # -- main entry ----------------------------------------------------------

    def plan(self, x_meas: np.ndarray, refs: CycleReferences) -> PlannerOutput:
        t0 = time.perf_counter()
        x_meas = np.asarray(x_meas, dtype=float)
        if self.config.mode == "fddp":
            out = self._plan_fddp(x_meas, refs, t0)
        else:
            out = self._plan_admm(x_meas, refs, t0)
        self.cycle_index += 1
        return out

    def _plan_admm(self, x0, refs, t0) -> PlannerOutput:
        model, cfg = self.model, self.config
        n = model.nq
        T = cfg.horizon
        q0 = x0[:n]
        w = cfg.weights
        oriented = cfg.mode == "tompc"

        results = self.world.query(q0)  # the one distance query of this cycle
        dmin = min((r.distance for r in results), default=np.inf)
        self._clear_streak = self._clear_streak + 1 if dmin >= w.d_soft else 0
        rep = build_repulsive_field(model, q0, results, w, cfg.frame) \
            if oriented else None
        if results:
            lin = linearize_distances(model, q0, results)
            C, lower = assemble_constraints(
                lin, w.d_active + cfg.constraint_margin)
        else:
            lin, C, lower = None, None, None

        st = self.state
        if st is None or not st.initialized:
            u0 = gravity_torque(model, q0)
            y_us = np.tile(u0, (T, 1))
            y_xs = np.tile(x0, (T + 1, 1))
            lam_u = np.zeros((T, n))
            lam_x = np.zeros((T, 2 * n))
            qp_active = [None] * T
        else:
            # consecutive cycles are one planner step apart: shift the plan
            y_us = np.vstack([st.y_us[1:], st.y_us[-1:]])
            y_xs = np.vstack([st.y_xs[1:], st.y_xs[-1:]])
            y_xs[0] = x0
            lam_u = np.vstack([st.lam_u[1:], st.lam_u[-1:]])
            lam_x = np.vstack([st.lam_x[1:], st.lam_x[-1:]])
            qp_active = st.qp_active[1:] + [st.qp_active[-1]]
            # dual hygiene on the shifted configuration duals.  a dual held
            # over from a press keeps displacing the task anchor into the
            # rows after the plan has pulled clear, pinning the horizon
            # tail on a boundary the dual itself is creating; plain ascent
            # drains the stale kind only at rho * slack per sweep.  stages
            # whose shifted iterate sits strictly inside the rows are safe
            # to clear immediately, and once the measured clearance has
            # stayed out of the repulsive band for a few cycles the
            # remaining boundary-riding duals are the self-made kind
            if C is not None and self._clear_streak < 3:
                slack = (y_xs[1:, :n] @ C.T - lower[None, :]).min(axis=1)
                lam_x[slack > 3e-3, :n] = 0.0
            else:
                lam_x[:, :n] = 0.0

        # one relaxation factor per cycle, from the measured configuration,
        # held fixed across sweeps like the distance linearization
        relax = goal_relaxation(dmin, w) if oriented else 1.0

        objective = TaskObjective(model, refs, w, self.interaction, relax,
                                  cfg.frame)
        problem = self._oc_problem(objective)
        # (re)project the safety iterate from the task iterate
        z_x, z_u = self._z_step(y_xs, y_us, lam_x, lam_u, rep, C, lower,
                                qp_active)

        residual = np.inf
        iterations = 0
        cost = np.nan
        best_residual = np.inf
        stalled = 0
        for _ in range(cfg.max_admm_iters):
            iterations += 1
            problem.proximal = ProximalTerm(cfg.rho, z_u, z_x, lam_u, lam_x)
            sol = ddp_solve(problem, x0, y_us, xs_init=y_xs,
                            max_iters=cfg.max_ddp_iters, tol_cost=cfg.inner_tol)
            y_xs, y_us, cost = sol.xs, sol.us, sol.cost
            z_x, z_u = self._z_step(y_xs, y_us, lam_x, lam_u, rep, C, lower,
                                    qp_active)
            lam_u = lam_u + cfg.rho * (y_us - z_u)
            lam_x = lam_x + cfg.rho * (y_xs[1:] - z_x)
            residual = self._gmap.residual(y_xs, y_us, z_u, z_x)
            if residual <= cfg.residual_tol:
                break
            # an active safety row leaves a consensus gap the splitting
            # cannot close within one cycle: the task subproblem has no
            # curvature along the arm's redundant direction, so the gap
            # floors near the held dual over rho instead of vanishing.
            # once the residual stops shrinking and the task iterate itself
            # sits on the right side of the rows, further sweeps only slide
            # the plan along the boundary
            if residual < 0.8 * best_residual:
                best_residual = residual
                stalled = 0
            else:
                stalled += 1
                if stalled >= 2 and self._rows_ok(y_xs, C, lower):
                    break

        self.state = ADMMState(y_xs, y_us, z_x, z_u, lam_x, lam_u, qp_active,
                               initialized=True)
        xs_out = np.vstack([x0[None, :], z_x])
        dt_us = (time.perf_counter() - t0) * 1e6
        return PlannerOutput(
            q_des=z_x[0, :n].copy(), qd_des=z_x[0, n:].copy(),
            tau_ff=z_u[0].copy(), xs=xs_out, us=z_u.copy(),
            iterations=iterations, residual=residual,
            min_distance=float(dmin),
            relax=float(relax), cost=cost,
            solve_time_us=dt_us, mode=cfg.mode, cycle_index=self.cycle_index,
            lin=lin, constraint_rows=(C, lower) if C is not None else None)

    def _plan_fddp(self, x0, refs, t0) -> PlannerOutput:
        """Penalty-based single-solver baseline: one optimal-control solve
        with a quadratic avoidance penalty, distances queried per step."""
        model, cfg = self.model, self.config
        n = model.nq
        T = cfg.horizon
        q0 = x0[:n]
        dvals = self.world.distances_only(q0)
        dmin = float(dvals.min()) if dvals.size else np.inf

        objective = TaskObjective(model, refs, cfg.weights, self.interaction,
                                  relax=1.0, frame=cfg.frame,
                                  barrier_query=self.world.query)
        problem = self._oc_problem(objective)

        st = self.state
        if st is None or not st.initialized:
            y_us = np.tile(gravity_torque(model, q0), (T, 1))
            y_xs = None
        else:
            y_us = np.vstack([st.y_us[1:], st.y_us[-1:]])
            y_xs = np.vstack([st.y_xs[1:], st.y_xs[-1:]])
            y_xs[0] = x0
        sol = ddp_solve(problem, x0, y_us, xs_init=y_xs,
                        max_iters=cfg.fddp_max_iters)
        self.state = ADMMState(sol.xs, sol.us, sol.xs[1:].copy(),
                               sol.us.copy(), np.zeros((T, 2 * n)),
                               np.zeros((T, n)), [None] * T, initialized=True)
        tau = clamp_controls(sol.us[0], -model.tau_max, model.tau_max)
        dt_us = (time.perf_counter() - t0) * 1e6
        return PlannerOutput(
            q_des=sol.xs[1, :n].copy(), qd_des=sol.xs[1, n:].copy(),
            tau_ff=tau, xs=sol.xs.copy(), us=sol.us.copy(),
            iterations=sol.iterations, residual=0.0, min_distance=dmin,
            relax=1.0, cost=sol.cost, solve_time_us=dt_us, mode=cfg.mode,
            cycle_index=self.cycle_index, lin=None, constraint_rows=None)
