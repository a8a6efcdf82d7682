"""Feasibility-driven differential dynamic programming (Gauss-Newton iLQR).

The solver accepts an infeasible warm start (state and control trajectories
that do not satisfy the dynamics); the defects are contracted through the
forward pass instead of being rolled out away, which keeps warm starts from
a previous MPC cycle useful.  Regularization is Levenberg-style on Quu.

An optional proximal term ties selected trajectory blocks to external
targets; this is the coupling handle the operator-splitting planner uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import _kernels as _k

_ALPHAS = tuple(0.5 ** k for k in range(7))  # 1, 1/2, ..., 1/64
_REG_INIT = 1e-9
_REG_MAX = 1e6
_GAP_TOL = 1e-9


@dataclass
class ProximalTerm:
    """Quadratic coupling (rho/2) || w - z + lam / rho ||^2 on each block.

    z_u, lam_u have shape (T, nu) for u_0..u_{T-1}; z_x, lam_x have shape
    (T, nx) for x_1..x_T (the initial state is fixed, so it carries no term).
    """

    rho: float
    z_u: np.ndarray
    z_x: np.ndarray
    lam_u: np.ndarray
    lam_x: np.ndarray

    def u_target(self, t: int) -> np.ndarray:
        return self.z_u[t] - self.lam_u[t] / self.rho

    def x_target(self, t: int) -> np.ndarray:
        """Target for x_{t+1} (t indexes stages)."""
        return self.z_x[t] - self.lam_x[t] / self.rho


@dataclass
class OCProblem:
    """Discrete-time optimal control problem over a fixed horizon T.

    Callbacks:
      dynamics(t, x, u) -> x_next
      dynamics_derivs(t, x, u) -> (A, B)
      stage_expansion(t, x, u) -> (l, lx, lu, lxx, luu, lux)
      stage_cost(t, x, u) -> float
      terminal_expansion(x) -> (l, lx, lxx)
      terminal_cost(x) -> float
    """

    nx: int
    nu: int
    T: int
    dynamics: Callable
    dynamics_derivs: Callable
    stage_cost: Callable
    stage_expansion: Callable
    terminal_cost: Callable
    terminal_expansion: Callable
    proximal: Optional[ProximalTerm] = None


@dataclass
class DDPSolution:
    xs: np.ndarray          # (T+1, nx), satisfies the dynamics
    us: np.ndarray          # (T, nu)
    gains: np.ndarray       # (T, nu, nx) feedback along the solution
    cost: float
    iterations: int
    converged: bool
    reg: float
    gap_norm: float


def _total_cost(p: OCProblem, xs, us) -> float:
    c = sum(p.stage_cost(t, xs[t], us[t]) for t in range(p.T))
    c += p.terminal_cost(xs[p.T])
    if p.proximal is not None:
        pr = p.proximal
        half_rho = 0.5 * pr.rho
        for t in range(p.T):
            du = us[t] - pr.u_target(t)
            dx = xs[t + 1] - pr.x_target(t)
            c += half_rho * (du @ du + dx @ dx)
    return float(c)


def _gaps(p: OCProblem, xs, us) -> np.ndarray:
    """fs[t] = f(x_t, u_t) - x_{t+1}; zero on a feasible trajectory."""
    fs = np.zeros((p.T, p.nx))
    for t in range(p.T):
        fs[t] = p.dynamics(t, xs[t], us[t]) - xs[t + 1]
    return fs


def _gather(p: OCProblem, xs, us):
    """Stack stage derivatives and cost expansions (proximal terms folded
    in), so regularization retries can rerun the sweep without re-evaluating
    any callback."""
    T, nx, nu = p.T, p.nx, p.nu
    As = np.empty((T, nx, nx))
    Bs = np.empty((T, nx, nu))
    lxs = np.empty((T, nx))
    lus = np.empty((T, nu))
    lxxs = np.empty((T, nx, nx))
    luus = np.empty((T, nu, nu))
    luxs = np.empty((T, nu, nx))
    for t in range(T):
        As[t], Bs[t] = p.dynamics_derivs(t, xs[t], us[t])
        _, lxs[t], lus[t], lxxs[t], luus[t], luxs[t] = \
            p.stage_expansion(t, xs[t], us[t])
    _, VxT, VxxT = p.terminal_expansion(xs[T])
    VxT = VxT.astype(float, copy=True)
    VxxT = VxxT.astype(float, copy=True)
    if p.proximal is not None:
        pr = p.proximal
        rho = pr.rho
        lus += rho * (us - (pr.z_u - pr.lam_u / rho))
        luus += rho * np.eye(nu)[None, :, :]
        if T > 1:
            lxs[1:] += rho * (xs[1:T] - (pr.z_x[:T - 1]
                                         - pr.lam_x[:T - 1] / rho))
            lxxs[1:] += rho * np.eye(nx)[None, :, :]
        VxT += rho * (xs[T] - pr.x_target(T - 1))
        VxxT += rho * np.eye(nx)
    return As, Bs, lxs, lus, lxxs, luus, luxs, VxT, VxxT


def _backward_pass(gathered, fs, reg):
    ks, Ks, exp1, exp2, ok = _k.lqr_backward_sweep(*gathered, fs, reg)
    if not ok:
        return None
    return ks, Ks, float(exp1), float(exp2)


def _forward_pass(p: OCProblem, xs, us, fs, ks, Ks, alpha):
    """Rollout with defect contraction: remaining gap scales by (1 - alpha)."""
    xnew = np.zeros_like(xs)
    unew = np.zeros_like(us)
    xnew[0] = xs[0]
    for t in range(p.T):
        unew[t] = us[t] + alpha * ks[t] + Ks[t] @ (xnew[t] - xs[t])
        xnew[t + 1] = p.dynamics(t, xnew[t], unew[t]) - (1.0 - alpha) * fs[t]
        if not np.all(np.isfinite(xnew[t + 1])):
            return None
    return xnew, unew


def ddp_solve(p: OCProblem, x0: np.ndarray, us_init: np.ndarray,
              xs_init: np.ndarray = None, max_iters: int = 50,
              tol_cost: float = 1e-9, tol_grad: float = 1e-9,
              reg_init: float = _REG_INIT) -> DDPSolution:
    """Minimize the OC problem from (xs_init, us_init).

    Without xs_init the controls are rolled out first (feasible start).  With
    xs_init the initial trajectory may violate the dynamics; those defects
    are driven to zero by the forward passes.  On feasible iterates the cost
    is non-increasing; a defect-contracting step may raise it once.
    """
    us = np.array(us_init, dtype=float)
    if xs_init is None:
        xs = np.zeros((p.T + 1, p.nx))
        xs[0] = x0
        for t in range(p.T):
            xs[t + 1] = p.dynamics(t, xs[t], us[t])
    else:
        xs = np.array(xs_init, dtype=float)
        xs[0] = x0
    fs = _gaps(p, xs, us)
    cost = _total_cost(p, xs, us)
    reg = reg_init
    converged = False
    gains = None
    it = 0
    while it < max_iters:
        it += 1
        gathered = _gather(p, xs, us)
        bp = _backward_pass(gathered, fs, reg)
        while bp is None and reg < _REG_MAX:
            reg *= 10.0
            bp = _backward_pass(gathered, fs, reg)
        if bp is None:
            break
        ks, Ks, exp1, exp2 = bp
        gains = Ks
        gap_norm = float(np.abs(fs).max()) if fs.size else 0.0
        if abs(exp1) < tol_grad and gap_norm < _GAP_TOL:
            converged = True
            break
        accepted = False
        prev_cost = cost
        for alpha in _ALPHAS:
            trial = _forward_pass(p, xs, us, fs, ks, Ks, alpha)
            if trial is None:
                continue
            xt, ut = trial
            ct = _total_cost(p, xt, ut)
            if ct < cost - 1e-12:
                xs, us, cost = xt, ut, ct
                # the rollout contracts each defect by exactly (1 - alpha)
                fs = (1.0 - alpha) * fs
                accepted = True
                reg = max(reg / 10.0, _REG_INIT)
                break
        if not accepted and gap_norm > _GAP_TOL:
            # close the defects even if the cost model says otherwise
            trial = _forward_pass(p, xs, us, fs, ks, Ks, 1.0)
            if trial is not None:
                xs, us = trial
                cost = _total_cost(p, xs, us)
                fs = np.zeros_like(fs)
                accepted = True
        if not accepted:
            if reg >= _REG_MAX:
                break
            reg = min(reg * 10.0, _REG_MAX)
            continue
        gap_now = float(np.abs(fs).max()) if fs.size else 0.0
        if gap_now < _GAP_TOL and abs(prev_cost - cost) < tol_cost:
            converged = True
            break
    gap_norm = float(np.abs(fs).max()) if fs.size else 0.0
    if gains is None:
        gains = np.zeros((p.T, p.nu, p.nx))
    return DDPSolution(xs, us, gains, cost, it, converged, reg, gap_norm)
