"""Task costs and their Gauss-Newton expansions for the trajectory optimizer.

Stage cost pieces:

* motion: pose error to a reference in the task frame tangent, plus joint
  velocity regularization
* force: tracking of a reference contact wrench through the spring-damper
  environment model
* control: torques regularized toward gravity compensation
* repulsive: null-space joint velocity pulled toward a field pushing away
  from nearby obstacles (handled in the safety subproblems)
* barrier: quadratic penalty under the safety distance (penalty-based
  avoidance for the single-solver baseline)

Near obstacles the motion and force weights are scaled down by a smooth
relaxation factor so the safety terms win the trade-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .collision import DistanceResult, distance_gradient
from .geometry import Pose
from .interaction import InteractionModel
from .robot import RobotModel, gravity_torque, null_space_projector


@dataclass(frozen=True)
class TaskWeights:
    """Diagonal cost weights and the obstacle-coupling parameters.

    motion weights must be zero on force-selected directions (the two
    objectives are complementary by construction).  Distances are meters:
    d_active is the hard safety margin, d_soft the radius where relaxation
    and repulsion start.
    """

    motion: np.ndarray = field(default_factory=lambda: np.array(
        [500.0, 500.0, 500.0, 50.0, 50.0, 50.0]))
    velocity: float = 0.1
    force: np.ndarray = field(default_factory=lambda: np.full(6, 5.0))
    force_selection: np.ndarray = field(default_factory=lambda: np.zeros(6))
    control: float = 1e-3
    repulse: float = 1.0
    repulse_gain: float = 2.0
    relax_sharpness: float = 2.0
    d_active: float = 0.02
    d_soft: float = 0.15
    barrier: float = 2.0

    def __post_init__(self):
        m = np.asarray(self.motion, dtype=float)
        f = np.asarray(self.force, dtype=float)
        s = np.asarray(self.force_selection, dtype=float)
        assert m.shape == (6,) and f.shape == (6,) and s.shape == (6,)
        assert np.all((s == 0) | (s == 1)), "selection entries must be 0/1"
        assert np.all(m * s == 0), "motion weight on a force-selected direction"
        assert self.d_active < self.d_soft
        object.__setattr__(self, "motion", m)
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "force_selection", s)

    @staticmethod
    def from_dict(obj: dict) -> "TaskWeights":
        kw = {}
        for key in ("motion", "force", "force_selection"):
            if key in obj:
                kw[key] = np.asarray(obj[key], dtype=float)
        for key in ("velocity", "control", "repulse", "repulse_gain",
                    "relax_sharpness", "d_active", "d_soft", "barrier"):
            if key in obj:
                kw[key] = float(obj[key])
        return TaskWeights(**kw)


def goal_relaxation(d_min: float, weights: TaskWeights) -> float:
    """Smooth factor in (0, 1] that fades the task out near obstacles.

    Equals 1 at or beyond d_soft and exp(-sharpness) at d_active; continues
    to decay below.
    """
    if d_min >= weights.d_soft:
        return 1.0
    span = weights.d_soft - weights.d_active
    return float(np.exp(-weights.relax_sharpness * (weights.d_soft - d_min) / span))


# ---------------------------------------------------------------------------
# Individual terms.  Each returns (value, grad, gauss_newton_hessian) blocks
# over the arguments it depends on.
# ---------------------------------------------------------------------------

def motion_cost(model: RobotModel, q, qd, ref: Pose, weights: TaskWeights,
                relax: float = 1.0, frame: str = "ee"):
    """Pose tracking plus velocity regularization.

    Returns (value, gq, gqd, Hqq, Hqdqd).  The pose-error Jacobian chains the
    body-frame task Jacobian through the inverse right Jacobian of the error,
    so the gradient is exact (not small-angle).
    """
    idx, off = model.frame(frame)
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd = np.ascontiguousarray(qd, dtype=np.float64)
    e, _, _, Je = _k.pose_task_terms(
        q, qd, *model.kin, idx,
        np.ascontiguousarray(off.rotation),
        np.ascontiguousarray(off.translation),
        np.ascontiguousarray(ref.rotation),
        np.ascontiguousarray(ref.translation), True)
    w = relax * weights.motion
    val = float(e @ (w * e)) + weights.velocity * float(qd @ qd)
    gq = 2.0 * Je.T @ (w * e)
    gqd = 2.0 * weights.velocity * qd
    Hqq = 2.0 * Je.T @ (w[:, None] * Je)
    Hqdqd = 2.0 * weights.velocity * np.eye(model.nq)
    return val, gq, gqd, Hqq, Hqdqd


def force_cost(model: RobotModel, q, qd, interaction: InteractionModel,
               f_ref: np.ndarray, weights: TaskWeights, relax: float = 1.0,
               fd_step: float = 1e-6):
    """Wrench tracking through the environment model.

    Returns (value, gq, gqd, Hqq, Hqdqd, Hqqd).  The wrench's q sensitivity
    is finite-differenced (it is cheap and exact to O(h^2)); the velocity
    sensitivity D J_local is analytic.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd = np.ascontiguousarray(qd, dtype=np.float64)
    w = relax * weights.force_selection * weights.force
    idx, off = model.frame(interaction.frame)
    F, Jloc, dFdq = _k.contact_wrench_fd(
        q, qd, fd_step, *model.kin, idx,
        np.ascontiguousarray(off.rotation),
        np.ascontiguousarray(off.translation),
        interaction.stiffness, interaction.damping,
        np.ascontiguousarray(interaction.anchor.rotation),
        np.ascontiguousarray(interaction.anchor.translation),
        interaction.sign)
    r = np.asarray(f_ref, dtype=float) - F
    dFdqd = interaction.sign * interaction.damping[:, None] * Jloc
    # residual jacobians carry the minus sign of r = f_ref - F
    val = float(r @ (w * r))
    gq = -2.0 * dFdq.T @ (w * r)
    gqd = -2.0 * dFdqd.T @ (w * r)
    Hqq = 2.0 * dFdq.T @ (w[:, None] * dFdq)
    Hqdqd = 2.0 * dFdqd.T @ (w[:, None] * dFdqd)
    Hqqd = 2.0 * dFdq.T @ (w[:, None] * dFdqd)
    return val, gq, gqd, Hqq, Hqdqd, Hqqd


def control_cost(model: RobotModel, q, u, weights: TaskWeights):
    """Torque regularization toward gravity compensation.

    Returns (value, gq, gu, Hqq, Huu, Huq).  Gravity's configuration
    dependence is kept so the q gradient is exact.
    """
    n = model.nq
    q = np.ascontiguousarray(q, dtype=np.float64)
    g, dgdq = _k.gravity_with_gradient(q, *model.dyn)
    r = np.asarray(u, dtype=float) - g
    R = weights.control
    val = R * float(r @ r)
    gq = -2.0 * R * dgdq.T @ r
    gu = 2.0 * R * r
    Hqq = 2.0 * R * dgdq.T @ dgdq
    Huu = 2.0 * R * np.eye(n)
    Huq = -2.0 * R * dgdq
    return val, gq, gu, Hqq, Huu, Huq


def barrier_cost(model: RobotModel, q, results: list[DistanceResult],
                 weights: TaskWeights):
    """Quadratic penalty on relative intrusion below the safety distance.

    (sigma/2) ((d - d_active)/d_active)^2 per pair inside the band, so
    unit-order sigma values push back at task-cost scale; (value, gq, Hqq).
    """
    n = model.nq
    val = 0.0
    gq = np.zeros(n)
    Hqq = np.zeros((n, n))
    sig = weights.barrier
    scale = 1.0 / weights.d_active
    for r in results:
        if r.distance <= weights.d_active:
            grad = scale * distance_gradient(model, q, r)
            err = scale * (r.distance - weights.d_active)
            val += 0.5 * sig * err * err
            gq += sig * err * grad
            Hqq += sig * np.outer(grad, grad)
    return val, gq, Hqq


def _damped_pinv(J: np.ndarray) -> np.ndarray:
    sigma = np.linalg.svd(J, compute_uv=False)
    if sigma[-1] < 1e-8:
        return J.T @ np.linalg.inv(J @ J.T + 1e-4 * np.eye(J.shape[0]))
    return np.linalg.pinv(J)


@dataclass(frozen=True)
class RepulsiveField:
    """Frozen per-cycle quadratic in qd: || N (qd - qd_repulse) ||^2_W.

    qd_repulse maps the per-pair escape velocities into joint space through
    damped witness-Jacobian pseudo-inverses; N is the task null-space
    projector so the term never fights the task directly.
    """

    H: np.ndarray       # (n, n), PSD, includes the factor 2 of the expansion
    g0: np.ndarray      # gradient at qd = 0
    qd_repulse: np.ndarray
    active_pairs: int

    def gradient(self, qd: np.ndarray) -> np.ndarray:
        return self.g0 + self.H @ np.asarray(qd, dtype=float)

    def value(self, qd: np.ndarray) -> float:
        qd = np.asarray(qd, dtype=float)
        return float(0.5 * qd @ self.H @ qd + self.g0 @ qd + self._const)

    @property
    def _const(self):
        b = self.qd_repulse
        return float(0.5 * b @ self.H @ b) if b.size else 0.0


def build_repulsive_field(model: RobotModel, q, results: list[DistanceResult],
                          weights: TaskWeights, frame: str = "ee"
                          ) -> RepulsiveField:
    """Assemble the repulsive quadratic at the measured configuration.

    Pairs closer than d_soft contribute an escape velocity
    repulse_gain * (d_soft - d) * normal at their witness point.
    """
    n = model.nq
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd_rep = np.zeros(n)
    active = 0
    R_all, p_all = _k.fk_all(q, *model.kin)
    for r in results:
        if r.distance <= weights.d_soft:
            v = weights.repulse_gain * (weights.d_soft - r.distance) * r.normal
            Jp = _k.point_jacobian_world(q, R_all, p_all, model.jaxis, r.link,
                                         np.ascontiguousarray(r.point_robot))[:3]
            qd_rep += _damped_pinv(Jp) @ v
            active += 1
    if active == 0:
        return RepulsiveField(np.zeros((n, n)), np.zeros(n), qd_rep, 0)
    N = null_space_projector(model, q, frame)
    W = weights.repulse * np.eye(n)
    H = 2.0 * N.T @ W @ N
    g0 = -H @ qd_rep
    return RepulsiveField(H, g0, qd_rep, active)


# ---------------------------------------------------------------------------
# Assembled objective for the optimal-control subproblem
# ---------------------------------------------------------------------------

@dataclass
class CycleReferences:
    """Per-horizon-step references sampled for one planning cycle."""

    poses: list          # length T+1 of Pose
    forces: np.ndarray   # (T+1, 6)

    def __post_init__(self):
        self.forces = np.asarray(self.forces, dtype=float)
        assert len(self.poses) == self.forces.shape[0]


class TaskObjective:
    """Stage/terminal task costs over x = (q, qd), u for the optimizer.

    Holds the per-cycle frozen context: relaxation factor, references, and
    (for the penalty-based baseline) a distance query hook for the barrier.
    """

    def __init__(self, model: RobotModel, refs: CycleReferences,
                 weights: TaskWeights, interaction: InteractionModel = None,
                 relax: float = 1.0, frame: str = "ee", barrier_query=None):
        self.model = model
        self.refs = refs
        self.weights = weights
        self.interaction = interaction
        self.relax = relax
        self.frame = frame
        self.barrier_query = barrier_query  # q -> list[DistanceResult]
        self.n = model.nq
        idx, off = model.frame(frame)
        self._task_frame = (idx, np.ascontiguousarray(off.rotation),
                            np.ascontiguousarray(off.translation))
        self._ref_R = np.ascontiguousarray(
            np.stack([p.rotation for p in refs.poses]))
        self._ref_p = np.ascontiguousarray(
            np.stack([p.translation for p in refs.poses]))
        if interaction is not None:
            cidx, coff = model.frame(interaction.frame)
            self._contact = (
                cidx, np.ascontiguousarray(coff.rotation),
                np.ascontiguousarray(coff.translation),
                interaction.stiffness, interaction.damping,
                np.ascontiguousarray(interaction.anchor.rotation),
                np.ascontiguousarray(interaction.anchor.translation),
                interaction.sign)
        else:
            self._contact = None

    def _state_terms(self, t: int, q, qd, want_grad: bool):
        w = self.weights
        n = self.n
        q = np.ascontiguousarray(q, dtype=np.float64)
        qd = np.ascontiguousarray(qd, dtype=np.float64)
        gq = np.zeros(n)
        gqd = np.zeros(n)
        Hqq = np.zeros((n, n))
        Hqdqd = np.zeros((n, n))
        Hqqd = np.zeros((n, n))
        idx, frot, ftrans = self._task_frame
        e, _, _, Je = _k.pose_task_terms(q, qd, *self.model.kin, idx, frot,
                                         ftrans, self._ref_R[t],
                                         self._ref_p[t], want_grad)
        wm = self.relax * w.motion
        out_val = float(e @ (wm * e)) + w.velocity * float(qd @ qd)
        if want_grad:
            gq += 2.0 * Je.T @ (wm * e)
            gqd += 2.0 * w.velocity * qd
            Hqq += 2.0 * Je.T @ (wm[:, None] * Je)
            Hqdqd += 2.0 * w.velocity * np.eye(n)
        if self._contact is not None:
            wf = self.relax * w.force_selection * w.force
            if want_grad:
                F, Jloc, dFdq = _k.contact_wrench_fd(q, qd, 1e-6,
                                                     *self.model.kin,
                                                     *self._contact)
                r = self.refs.forces[t] - F
                dFdqd = self._contact[7] * self._contact[4][:, None] * Jloc
                out_val += float(r @ (wf * r))
                gq += -2.0 * dFdq.T @ (wf * r)
                gqd += -2.0 * dFdqd.T @ (wf * r)
                Hqq += 2.0 * dFdq.T @ (wf[:, None] * dFdq)
                Hqdqd += 2.0 * dFdqd.T @ (wf[:, None] * dFdqd)
                Hqqd += 2.0 * dFdq.T @ (wf[:, None] * dFdqd)
            else:
                F, _ = _k.contact_wrench(q, qd, *self.model.kin,
                                         *self._contact)
                r = self.refs.forces[t] - F
                out_val += float(r @ (wf * r))
        if self.barrier_query is not None:
            results = self.barrier_query(q)
            if want_grad:
                v, a, A = barrier_cost(self.model, q, results, w)
                out_val += v
                gq += a
                Hqq += A
            else:
                for r in results:
                    if r.distance <= w.d_active:
                        rel = (r.distance - w.d_active) / w.d_active
                        out_val += 0.5 * w.barrier * rel * rel
        return out_val, gq, gqd, Hqq, Hqdqd, Hqqd

    def stage_cost(self, t: int, x, u) -> float:
        n = self.n
        val, *_ = self._state_terms(t, x[:n], x[n:], want_grad=False)
        r = np.asarray(u, dtype=float) - gravity_torque(self.model, x[:n])
        return val + self.weights.control * float(r @ r)

    def stage_expansion(self, t: int, x, u):
        """(value, lx, lu, lxx, luu, lux) with x = (q, qd)."""
        n = self.n
        q, qd = x[:n], x[n:]
        val, gq, gqd, Hqq, Hqdqd, Hqqd = self._state_terms(t, q, qd, True)
        cv, cgq, gu, cHqq, Huu, Huq = control_cost(self.model, q, u, self.weights)
        val += cv
        gq = gq + cgq
        Hqq = Hqq + cHqq
        lx = np.concatenate([gq, gqd])
        lxx = np.zeros((2 * n, 2 * n))
        lxx[:n, :n] = Hqq
        lxx[n:, n:] = Hqdqd
        lxx[:n, n:] = Hqqd
        lxx[n:, :n] = Hqqd.T
        lux = np.zeros((n, 2 * n))
        lux[:, :n] = Huq
        return val, lx, gu, lxx, Huu, lux

    def terminal_cost(self, x) -> float:
        n = self.n
        val, *_ = self._state_terms(len(self.refs.poses) - 1, x[:n], x[n:], False)
        return val

    def terminal_expansion(self, x):
        n = self.n
        t = len(self.refs.poses) - 1
        val, gq, gqd, Hqq, Hqdqd, Hqqd = self._state_terms(t, x[:n], x[n:], True)
        lx = np.concatenate([gq, gqd])
        lxx = np.zeros((2 * n, 2 * n))
        lxx[:n, :n] = Hqq
        lxx[n:, n:] = Hqdqd
        lxx[:n, n:] = Hqqd
        lxx[n:, :n] = Hqqd.T
        return val, lx, lxx
