"""Small dense convex QP solver (dual active set).

Solves   min 1/2 z' H z + g' z
         s.t. lb <= z <= ub,  C z >= c_lb

for strictly convex H.  Starting from the unconstrained minimizer, violated
constraints are activated one at a time while keeping dual feasibility, so no
feasible starting point is needed and termination is finite.  Problems here
are tiny (tens of variables and rows), so the KKT systems are re-solved
densely instead of maintaining factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_FEAS_TOL = 1e-10


@dataclass(frozen=True)
class QPProblem:
    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray = None
    ub: np.ndarray = None
    C: np.ndarray = None      # (k, m) rows of C z >= c_lb
    c_lb: np.ndarray = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float)
        m = g.shape[0]
        assert H.shape == (m, m)
        assert np.abs(H - H.T).max() < 1e-9, "Hessian must be symmetric"
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        assert np.all(lb <= ub)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        if self.C is not None:
            C = np.asarray(self.C, dtype=float).reshape(-1, m)
            object.__setattr__(self, "C", C)
            object.__setattr__(self, "c_lb", np.asarray(self.c_lb, dtype=float))
            assert self.C.shape[0] == self.c_lb.shape[0]

    @property
    def nvar(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class QPSolution:
    z: np.ndarray
    active_set: tuple          # indices into the stacked constraint list
    multipliers: np.ndarray    # same order as active_set
    kkt_residual: float
    iterations: int
    status: str                # "optimal" | "relaxed" | "max_iter"


def clamp_controls(u: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Box projection; the exact minimizer of a proximal step under bounds."""
    return np.minimum(np.maximum(u, lower), upper)


def _stack_rows(prob: QPProblem):
    """All constraints as a z >= b rows; returns (A, b, kind) with kind
    recording general rows (row index) vs box rows (-1)."""
    m = prob.nvar
    rows = []
    bs = []
    kinds = []
    if prob.C is not None:
        for i in range(prob.C.shape[0]):
            rows.append(prob.C[i])
            bs.append(prob.c_lb[i])
            kinds.append(i)
    eye = np.eye(m)
    for i in range(m):
        if np.isfinite(prob.lb[i]):
            rows.append(eye[i])
            bs.append(prob.lb[i])
            kinds.append(-1)
        if np.isfinite(prob.ub[i]):
            rows.append(-eye[i])
            bs.append(-prob.ub[i])
            kinds.append(-1)
    if rows:
        return np.asarray(rows), np.asarray(bs), kinds
    return np.zeros((0, m)), np.zeros(0), kinds


def _kkt_residual(prob: QPProblem, A, b, z, active, lam) -> float:
    grad = prob.H @ z + prob.g
    for idx, li in zip(active, lam):
        grad -= li * A[idx]
    r = float(np.abs(grad).max()) if grad.size else 0.0
    if A.shape[0]:
        r = max(r, float(np.maximum(b - A @ z, 0.0).max()))
        s = A @ z - b
        for idx, li in zip(active, lam):
            r = max(r, abs(li * s[idx]))
    return r


def _dual_active_set(H, g, A, b, warm, max_iter):
    """Core loop; returns (z, active list, lam list, iterations, feasible)."""
    try:
        chol = cho_factor(H)
    except np.linalg.LinAlgError:
        chol = cho_factor(H + 1e-10 * np.eye(H.shape[0]))
    z = cho_solve(chol, -g)
    active: list[int] = []
    lam: list[float] = []
    warm = set(warm or ())
    it = 0
    nrow = A.shape[0]
    while it < max_iter:
        s = A @ z - b if nrow else np.zeros(0)
        viol = np.where(s < -_FEAS_TOL)[0]
        if viol.size == 0:
            return z, active, lam, it, True
        p = -1
        if warm:
            cand = [v for v in viol if v in warm]
            if cand:
                p = min(cand, key=lambda v: s[v])
        if p < 0:
            p = viol[np.argmin(s[viol])]
        lam_p = 0.0
        # bring constraint p to the boundary, dropping blockers as needed
        while True:
            it += 1
            ap = A[p]
            if active:
                N = A[active].T
                HiN = cho_solve(chol, N)
                Hia = cho_solve(chol, ap)
                B = N.T @ HiN
                r = np.linalg.solve(B, N.T @ Hia)
                dz = Hia - HiN @ r
            else:
                r = np.zeros(0)
                dz = cho_solve(chol, ap)
            denom = float(ap @ dz)
            sp = float(ap @ z - b[p])
            t_full = -sp / denom if denom > 1e-14 else np.inf
            t_drop = np.inf
            jdrop = -1
            for jj, rr in enumerate(r):
                if rr > 1e-14:
                    cand = lam[jj] / rr
                    if cand < t_drop:
                        t_drop = cand
                        jdrop = jj
            t = min(t_full, t_drop)
            if not np.isfinite(t):
                return z, active, lam, it, False  # infeasible
            z = z + t * dz
            for jj in range(len(lam)):
                lam[jj] -= t * (r[jj] if jj < len(r) else 0.0)
            lam_p += t
            if t == t_full:
                active.append(p)
                lam.append(lam_p)
                break
            active.pop(jdrop)
            lam.pop(jdrop)
            if it >= max_iter:
                return z, active, lam, it, True
    return z, active, lam, it, True


def solve_qp(prob: QPProblem, warm_active=None, max_iter: int = 50,
             relax_penalty: float = 1e4) -> QPSolution:
    """Solve the QP; falls back to a slack-relaxed solve if the general rows
    are inconsistent with the box (hard box is always kept).

    warm_active seeds the order in which violated constraints are activated;
    it cannot change the minimizer, only the pivot count.
    """
    m = prob.nvar
    # fast path: diagonal Hessian and no general rows -> box projection
    if prob.C is None or prob.C.shape[0] == 0:
        H = prob.H
        if np.count_nonzero(H - np.diag(np.diagonal(H))) == 0:
            d = np.diagonal(H)
            assert np.all(d > 0)
            z = clamp_controls(-prob.g / d, prob.lb, prob.ub)
            A, b, _ = _stack_rows(prob)
            s = A @ z - b
            on = [i for i in range(A.shape[0]) if abs(s[i]) < 1e-12]
            lam = [float(A[i] @ (prob.H @ z + prob.g)) for i in on]
            res = _kkt_residual(prob, A, b, z, on, lam)
            return QPSolution(z, tuple(on), np.asarray(lam), res, 0, "optimal")
    A, b, kinds = _stack_rows(prob)
    z, active, lam, it, ok = _dual_active_set(prob.H, prob.g, A, b,
                                              warm_active, max_iter)
    if ok:
        res = _kkt_residual(prob, A, b, z, active, lam)
        status = "optimal" if it < max_iter else "max_iter"
        return QPSolution(z, tuple(active), np.asarray(lam), res, it, status)
    # relaxed retry: slack on the general rows, quadratic penalty
    k = prob.C.shape[0]
    He = np.zeros((m + k, m + k))
    He[:m, :m] = prob.H
    He[m:, m:] = 2.0 * relax_penalty * np.eye(k)
    ge = np.concatenate([prob.g, np.zeros(k)])
    Ce = np.hstack([prob.C, np.eye(k)])
    lbe = np.concatenate([prob.lb, np.zeros(k)])
    ube = np.concatenate([prob.ub, np.full(k, np.inf)])
    relaxed = QPProblem(He, ge, lbe, ube, Ce, prob.c_lb)
    A2, b2, _ = _stack_rows(relaxed)
    z2, active2, lam2, it2, ok2 = _dual_active_set(He, ge, A2, b2, None,
                                                   4 * max_iter)
    res = _kkt_residual(relaxed, A2, b2, z2, active2, lam2)
    return QPSolution(z2[:m], tuple(a for a in active2 if a < k),
                      np.asarray(lam2), res, it + it2,
                      "relaxed" if ok2 else "max_iter")
