"""Self-contained oracle checks behind `tompc check`.

Each check compares an analytic quantity against an independent reference
(finite differences, exhaustive enumeration, Riccati recursion, or surface
sampling) and returns (name, passed, detail).  The whole suite is designed
to run in well under two minutes.
"""

from __future__ import annotations

import itertools

import numpy as np

from .collision import (CollisionWorld, Obstacle, distance_gradient,
                        linearize_distances)
from .costs import (CycleReferences, TaskObjective, TaskWeights,
                    build_repulsive_field, goal_relaxation)
from .geometry import Pose, exp_pose, log_pose, pose_diff
from .interaction import InteractionModel, contact_wrench
from .planner import Planner, PlannerConfig
from .robot import (forward_kinematics, frame_jacobian, load_model,
                    mass_matrix, step, step_derivatives, gravity_torque)
from .solvers import OCProblem, QPProblem, ddp_solve, solve_qp


def _rel_err(a, b):
    scale = max(1.0, float(np.abs(b).max()))
    return float(np.abs(a - b).max()) / scale


def _random_tangent(rng, max_angle=3.0):
    xi = rng.normal(size=6)
    ang = np.linalg.norm(xi[3:])
    if ang > 1e-12:
        xi[3:] *= rng.uniform(0.0, max_angle) / ang
    return xi


def check_exp_log_roundtrip(rng=None):
    rng = rng or np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        xi = _random_tangent(rng)
        worst = max(worst, float(np.abs(log_pose(exp_pose(xi)) - xi).max()))
    return "exp_log_roundtrip", worst <= 1e-9, f"max err {worst:.2e} (tol 1e-9)"


def check_jacobian_fd(rng=None):
    rng = rng or np.random.default_rng(8)
    model = load_model("panda7")
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        q = rng.uniform(model.q_min, model.q_max)
        J = frame_jacobian(model, q)
        Jfd = np.zeros_like(J)
        for j in range(model.nq):
            qp, qm = q.copy(), q.copy()
            qp[j] += h
            qm[j] -= h
            Xp = forward_kinematics(model, qp)
            Xm = forward_kinematics(model, qm)
            Jfd[:3, j] = (Xp.translation - Xm.translation) / (2 * h)
            Jfd[3:, j] = log_pose(Pose(Xp.rotation @ Xm.rotation.T)) [3:] / (2 * h)
        worst = max(worst, _rel_err(J, Jfd))
    return "frame_jacobian_fd", worst <= 1e-4, f"max rel err {worst:.2e} (tol 1e-4)"


def check_step_derivatives_fd(rng=None):
    rng = rng or np.random.default_rng(9)
    model = load_model("panda7")
    dt, h = 0.05, 1e-6
    worst = 0.0
    cases = []
    for _ in range(10):
        q = rng.uniform(0.6 * model.q_min, 0.6 * model.q_max)
        qd = rng.uniform(-0.5, 0.5, model.nq)
        u = gravity_torque(model, q) + rng.uniform(-2, 2, model.nq)
        cases.append((np.concatenate([q, qd]), u, None))
    # contact case: anchored at the current pose, at rest (exact regime
    # of the analytic wrench partials)
    q = model.home.copy()
    anchor = forward_kinematics(model, q)
    inter = InteractionModel(stiffness=np.full(6, 300.0),
                            damping=np.full(6, 20.0), anchor=anchor)
    cases.append((np.concatenate([q, np.zeros(model.nq)]),
                  gravity_torque(model, q), inter))
    for x, u, inter in cases:
        A, B = step_derivatives(model, x, u, dt, inter)
        Afd = np.zeros_like(A)
        Bfd = np.zeros_like(B)
        for j in range(2 * model.nq):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            Afd[:, j] = (step(model, xp, u, dt, inter)
                         - step(model, xm, u, dt, inter)) / (2 * h)
        for j in range(model.nq):
            up, um = u.copy(), u.copy()
            up[j] += h
            um[j] -= h
            Bfd[:, j] = (step(model, x, up, dt, inter)
                         - step(model, x, um, dt, inter)) / (2 * h)
        worst = max(worst, _rel_err(A, Afd), _rel_err(B, Bfd))
    return "step_derivatives_fd", worst <= 1e-4, \
        f"max rel err {worst:.2e} (tol 1e-4)"


def _sample_world(rng):
    model = load_model("panda7")
    obs = [Obstacle("ball", "sphere",
                    center=rng.uniform([-0.2, -0.6, 0.1], [0.8, 0.6, 0.9]),
                    radius=rng.uniform(0.05, 0.15))]
    return model, CollisionWorld(model, obs)


def check_distance_gradient_fd(rng=None):
    rng = rng or np.random.default_rng(10)
    h = 1e-6
    worst = 0.0
    for _ in range(10):
        model, world = _sample_world(rng)
        q = rng.uniform(0.7 * model.q_min, 0.7 * model.q_max)
        for res in world.query(q):
            g = distance_gradient(model, q, res)
            gfd = np.zeros(model.nq)
            for j in range(model.nq):
                qp, qm = q.copy(), q.copy()
                qp[j] += h
                qm[j] -= h
                ip = world.query(qp)
                im = world.query(qm)
                key = (res.geom, res.obstacle)
                dp = next(r.distance for r in ip
                          if (r.geom, r.obstacle) == key)
                dm = next(r.distance for r in im
                          if (r.geom, r.obstacle) == key)
                gfd[j] = (dp - dm) / (2 * h)
            worst = max(worst, _rel_err(g, gfd))
    return "distance_gradient_fd", worst <= 1e-4, \
        f"max rel err {worst:.2e} (tol 1e-4)"


def check_cost_gradient_fd(rng=None):
    rng = rng or np.random.default_rng(11)
    model = load_model("panda7")
    h = 1e-6
    q = model.home + rng.uniform(-0.3, 0.3, model.nq)
    qd = rng.uniform(-0.4, 0.4, model.nq)
    u = gravity_torque(model, q) + rng.uniform(-3, 3, model.nq)
    x = np.concatenate([q, qd])
    anchor = forward_kinematics(model, model.home)
    inter = InteractionModel(stiffness=np.array([0, 0, 800.0, 0, 0, 0]),
                            damping=np.array([0, 0, 40.0, 0, 0, 0]),
                            anchor=anchor)
    w = TaskWeights(motion=np.array([500, 500, 0, 50, 50, 50.0]),
                    force_selection=np.array([0, 0, 1, 0, 0, 0.0]))
    ref = Pose.from_quat(anchor.translation + [0.05, -0.04, 0.02],
                         anchor.to_quat())
    refs = CycleReferences([ref] * 2, np.tile([0, 0, 5.0, 0, 0, 0], (2, 1)))
    obj = TaskObjective(model, refs, w, inter, relax=0.7)
    _, lx, lu, *_ = obj.stage_expansion(0, x, u)
    lxfd = np.zeros(2 * model.nq)
    for j in range(2 * model.nq):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        lxfd[j] = (obj.stage_cost(0, xp, u) - obj.stage_cost(0, xm, u)) / (2 * h)
    lufd = np.zeros(model.nq)
    for j in range(model.nq):
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        lufd[j] = (obj.stage_cost(0, x, up) - obj.stage_cost(0, x, um)) / (2 * h)
    err = max(_rel_err(lx, lxfd), _rel_err(lu, lufd))
    return "cost_gradient_fd", err <= 1e-4, f"max rel err {err:.2e} (tol 1e-4)"


def check_mass_matrix_spd(rng=None):
    rng = rng or np.random.default_rng(12)
    model = load_model("panda7")
    worst_sym = 0.0
    worst_eig = np.inf
    for _ in range(200):
        q = rng.uniform(model.q_min, model.q_max)
        M = mass_matrix(model, q)
        worst_sym = max(worst_sym, float(np.abs(M - M.T).max()))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(M).min()))
    ok = worst_sym < 1e-10 and worst_eig > 0
    return "mass_matrix_spd", ok, \
        f"sym err {worst_sym:.2e}, min eig {worst_eig:.2e} over 200 configs"


def check_ddp_riccati(rng=None):
    rng = rng or np.random.default_rng(13)
    nx, nu, T = 4, 2, 25
    Ad = rng.normal(size=(nx, nx))
    Ad *= 0.9 / np.abs(np.linalg.eigvals(Ad)).max()
    Bd = rng.normal(size=(nx, nu))
    Qc, Rc, Qf = 0.5 * np.eye(nx), 0.3 * np.eye(nu), 2.0 * np.eye(nx)
    x0 = rng.normal(size=nx)
    prob = OCProblem(
        nx, nu, T,
        dynamics=lambda t, x, u: Ad @ x + Bd @ u,
        dynamics_derivs=lambda t, x, u: (Ad, Bd),
        stage_cost=lambda t, x, u: 0.5 * (x @ Qc @ x + u @ Rc @ u),
        stage_expansion=lambda t, x, u: (0.5 * (x @ Qc @ x + u @ Rc @ u),
                                         Qc @ x, Rc @ u, Qc.copy(), Rc.copy(),
                                         np.zeros((nu, nx))),
        terminal_cost=lambda x: 0.5 * x @ Qf @ x,
        terminal_expansion=lambda x: (0.5 * x @ Qf @ x, Qf @ x, Qf.copy()))
    sol = ddp_solve(prob, x0, np.zeros((T, nu)))
    P = Qf.copy()
    gains = []
    for _ in range(T):
        K = np.linalg.solve(Rc + Bd.T @ P @ Bd, Bd.T @ P @ Ad)
        P = Qc + Ad.T @ P @ (Ad - Bd @ K)
        gains.append(K)
    gains.reverse()
    x = x0.copy()
    worst = 0.0
    for t in range(T):
        u = -gains[t] @ x
        worst = max(worst, float(np.abs(sol.us[t] - u).max()),
                    float(np.abs(sol.xs[t] - x).max()))
        x = Ad @ x + Bd @ u
    return "ddp_riccati", worst <= 1e-6, f"max err {worst:.2e} (tol 1e-6)"


def _enumerate_qp(H, g, A, b):
    m = H.shape[0]
    best, bestc = None, np.inf
    for r in range(0, min(A.shape[0], m) + 1):
        for combo in itertools.combinations(range(A.shape[0]), r):
            N = A[list(combo)]
            KKT = np.block([[H, -N.T], [N, np.zeros((r, r))]])
            try:
                sol = np.linalg.solve(KKT, np.concatenate([-g, b[list(combo)]]))
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:m], sol[m:]
            if np.any(lam < -1e-9) or np.any(A @ z - b < -1e-9):
                continue
            c = 0.5 * z @ H @ z + g @ z
            if c < bestc - 1e-12:
                bestc, best = c, z
    return best


def check_qp_enumeration(rng=None):
    rng = rng or np.random.default_rng(14)
    worst = 0.0
    solved = 0
    for _ in range(100):
        m = int(rng.integers(2, 4))
        k = int(rng.integers(1, 5))
        Q = rng.normal(size=(m, m))
        H = Q @ Q.T + m * np.eye(m)
        g = rng.normal(size=m)
        C = rng.normal(size=(k, m))
        cl = rng.normal(size=k) * 0.5
        lb, ub = np.full(m, -2.0), np.full(m, 2.0)
        Afull = np.vstack([C, np.eye(m), -np.eye(m)])
        bfull = np.concatenate([cl, lb, -ub])
        zstar = _enumerate_qp(H, g, Afull, bfull)
        sol = solve_qp(QPProblem(H, g, lb, ub, C, cl))
        if zstar is None:
            ok = sol.status == "relaxed"
            if not ok:
                return "qp_enumeration", False, "missed infeasibility"
            continue
        solved += 1
        worst = max(worst, float(np.abs(sol.z - zstar).max()),
                    sol.kkt_residual)
    return "qp_enumeration", worst <= 1e-8, \
        f"max err {worst:.2e} over {solved} feasible instances (tol 1e-8)"


def _sample_sphere(rng, c, r, k):
    v = rng.normal(size=(k, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return c + r * v


def _sample_capsule(rng, p1, p2, r, k):
    t = rng.uniform(size=(k, 1))
    axis = p1 + t * (p2 - p1)
    v = rng.normal(size=(k, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return axis + r * v


def _sample_box(rng, pose, half, k):
    pts = rng.uniform(-half, half, size=(k, 3))
    face = rng.integers(0, 3, size=k)
    side = rng.choice([-1.0, 1.0], size=k)
    for i in range(k):
        pts[i, face[i]] = side[i] * half[face[i]]
    return (pose.rotation @ pts.T).T + pose.translation


def check_distance_sampling(rng=None):
    """Closed-form pair distances vs dense surface sampling."""
    rng = rng or np.random.default_rng(15)
    model = load_model("panda7")
    worst = 0.0
    kinds = ["sphere", "capsule", "box"]
    for trial in range(12):
        kind = kinds[trial % 3]
        c = rng.uniform([0.0, -0.5, 0.1], [0.7, 0.5, 0.8])
        if kind == "sphere":
            obs = Obstacle("o", "sphere", center=c, radius=rng.uniform(0.05, 0.2))
        elif kind == "capsule":
            obs = Obstacle("o", "capsule", p1=c, p2=c + rng.uniform(-0.3, 0.3, 3),
                           radius=rng.uniform(0.04, 0.15))
        else:
            obs = Obstacle("o", "box", pose=Pose(exp_pose(
                np.concatenate([np.zeros(3), rng.uniform(-1, 1, 3)])).rotation, c),
                half_extents=rng.uniform(0.05, 0.25, 3))
        world = CollisionWorld(model, [obs])
        q = rng.uniform(0.7 * model.q_min, 0.7 * model.q_max)
        from . import _kernels as _k
        R_all, p_all = _k.fk_all(np.ascontiguousarray(q), *model.kin)
        for res, geom in zip(world.query(q), model.geoms):
            if res.distance < 0:
                continue
            a1 = p_all[geom.link] + R_all[geom.link] @ geom.p1
            a2 = p_all[geom.link] + R_all[geom.link] @ geom.p2
            pa = _sample_capsule(rng, a1, a2, geom.radius, 4000)
            if kind == "sphere":
                pb = _sample_sphere(rng, obs.center, obs.radius, 4000)
            elif kind == "capsule":
                pb = _sample_capsule(rng, obs.p1, obs.p2, obs.radius, 4000)
            else:
                pb = _sample_box(rng, obs.pose, obs.half_extents, 6000)
            dmin = np.inf
            for chunk in np.array_split(pa, 8):
                d2 = ((chunk[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
                dmin = min(dmin, float(np.sqrt(d2.min())))
            # sampling can only overestimate the true minimum
            err = dmin - res.distance
            if err < -1e-9:
                return "distance_sampling", False, \
                    f"sampled {dmin:.6f} below closed form {res.distance:.6f}"
            worst = max(worst, err)
    return "distance_sampling", worst <= 1e-3, \
        f"max sampling gap {worst:.2e} (tol 1e-3)"


def check_admm_residual():
    """A full planning cycle reaches the splitting tolerance."""
    model = load_model("panda7")
    X0 = forward_kinematics(model, model.home)
    obs = Obstacle("ball", "sphere",
                   center=X0.translation + np.array([0.0, 0.12, 0.0]),
                   radius=0.05)
    world = CollisionWorld(model, [obs])
    cfg = PlannerConfig(horizon=10, rho=2.0, residual_tol=1e-3)
    planner = Planner(model, world, cfg)
    ref = Pose.from_quat(X0.translation + np.array([0.0, 0.05, 0.0]),
                         X0.to_quat())
    refs = CycleReferences([ref] * (cfg.horizon + 1),
                           np.zeros((cfg.horizon + 1, 6)))
    x0 = np.concatenate([model.home, np.zeros(model.nq)])
    out = planner.plan(x0, refs)
    ok = out.residual <= cfg.residual_tol
    return "admm_residual", ok, \
        f"residual {out.residual:.2e} after {out.iterations} iterations " \
        f"(tol {cfg.residual_tol:g})"


ALL_CHECKS = (
    check_exp_log_roundtrip,
    check_jacobian_fd,
    check_step_derivatives_fd,
    check_distance_gradient_fd,
    check_cost_gradient_fd,
    check_mass_matrix_spd,
    check_ddp_riccati,
    check_qp_enumeration,
    check_distance_sampling,
    check_admm_residual,
)


def run_all_checks(verbose: bool = True) -> bool:
    ok_all = True
    for fn in ALL_CHECKS:
        name, ok, detail = fn()
        ok_all &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
