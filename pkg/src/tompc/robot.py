"""Serial-chain robot model: kinematics, dynamics, and the discrete step.

States are stacked vectors x = (q, qd) of length 2n, controls are joint
torques u of length n.  All model data loads from a JSON file; the bundled
7-joint arm is `load_model("panda7")`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels as _k
from .geometry import Pose, rotation_exp

_FD_STEP = 1e-6


def _rpy_to_rot(rpy) -> np.ndarray:
    """Fixed-axis roll-pitch-yaw (x, then y, then z) to rotation matrix."""
    r, p, y = rpy
    return (rotation_exp(np.array([0.0, 0.0, y]))
            @ rotation_exp(np.array([0.0, p, 0.0]))
            @ rotation_exp(np.array([r, 0.0, 0.0])))


@dataclass(frozen=True)
class CapsuleGeom:
    """Collision capsule rigidly attached to a link, endpoints in link frame."""

    name: str
    link: int
    p1: np.ndarray
    p2: np.ndarray
    radius: float


@dataclass(frozen=True)
class RobotModel:
    """Immutable model of a torque-controlled serial chain.

    Packed arrays feed the compiled kernels; the frames dict maps "link1"..
    "link<n>" and "ee" to (link index, fixed offset pose).
    """

    name: str
    joint_names: tuple
    jrot: np.ndarray      # (n,3,3) fixed rotation parent -> joint frame
    jtrans: np.ndarray    # (n,3)   fixed translation parent -> joint frame
    jaxis: np.ndarray     # (n,3)   joint axis, joint frame
    mass: np.ndarray      # (n,)
    com: np.ndarray       # (n,3)   link-frame COM
    inertia: np.ndarray   # (n,3,3) rotational inertia about COM, link frame
    eerot: np.ndarray     # (3,3)   end-effector offset from last link
    eetrans: np.ndarray   # (3,)
    gravity: np.ndarray   # (3,)
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    tau_max: np.ndarray
    home: np.ndarray
    geoms: tuple = field(default=())

    @property
    def nq(self) -> int:
        return self.jaxis.shape[0]

    @property
    def kin(self) -> tuple:
        return (self.jrot, self.jtrans, self.jaxis, self.eerot, self.eetrans)

    @property
    def dyn(self) -> tuple:
        return self.kin + (self.mass, self.com, self.inertia, self.gravity)

    def frame(self, name: str):
        """(link index, offset pose) for a named frame."""
        if name == "ee":
            return self.nq - 1, Pose(self.eerot, self.eetrans)
        if name.startswith("link"):
            idx = int(name[4:]) - 1
            if 0 <= idx < self.nq:
                return idx, Pose.identity()
        raise KeyError(f"unknown frame {name!r}")

    def state_bounds(self):
        """(lower, upper) box on x = (q, qd)."""
        lo = np.concatenate([self.q_min, -self.qd_max])
        hi = np.concatenate([self.q_max, self.qd_max])
        return lo, hi


def _validate(model: RobotModel) -> RobotModel:
    n = model.nq
    assert model.mass.shape == (n,) and np.all(model.mass > 0)
    for i in range(n):
        assert abs(np.linalg.norm(model.jaxis[i]) - 1.0) < 1e-9, "axis not unit"
        eig = np.linalg.eigvalsh(model.inertia[i])
        assert np.all(eig > 0), f"inertia of link {i + 1} not positive definite"
    assert np.all(model.q_min < model.q_max)
    assert np.all(model.qd_max > 0) and np.all(model.tau_max > 0)
    return model


def load_model(source) -> RobotModel:
    """Load a robot model from a JSON path or a bundled model name."""
    if isinstance(source, (str, Path)) and not str(source).endswith(".json"):
        text = resources.files("tompc.data").joinpath(f"{source}.json").read_text()
        data = json.loads(text)
    else:
        data = json.loads(Path(source).read_text())
    joints = data["joints"]
    n = len(joints)
    jrot = np.empty((n, 3, 3))
    jtrans = np.empty((n, 3))
    jaxis = np.empty((n, 3))
    mass = np.empty(n)
    com = np.empty((n, 3))
    inertia = np.empty((n, 3, 3))
    q_min = np.empty(n)
    q_max = np.empty(n)
    qd_max = np.empty(n)
    tau_max = np.empty(n)
    names = []
    for i, j in enumerate(joints):
        names.append(j["name"])
        jrot[i] = _rpy_to_rot(j.get("origin_rpy", (0.0, 0.0, 0.0)))
        jtrans[i] = j.get("origin_xyz", (0.0, 0.0, 0.0))
        jaxis[i] = j["axis"]
        mass[i] = j["mass"]
        com[i] = j["com"]
        if "inertia_diag" in j:
            inertia[i] = np.diag(j["inertia_diag"])
        else:
            inertia[i] = j["inertia"]
        q_min[i] = j["q_min"]
        q_max[i] = j["q_max"]
        qd_max[i] = j["qd_max"]
        tau_max[i] = j["tau_max"]
    link_idx = {f"link{i + 1}": i for i in range(n)}
    geoms = tuple(
        CapsuleGeom(g.get("name", f"geom{k}"), link_idx[g["link"]],
                    np.asarray(g["p1"], dtype=float),
                    np.asarray(g["p2"], dtype=float), float(g["radius"]))
        for k, g in enumerate(data.get("collision", ())))
    model = RobotModel(
        name=data.get("name", "robot"),
        joint_names=tuple(names),
        jrot=jrot, jtrans=jtrans, jaxis=jaxis,
        mass=mass, com=com, inertia=inertia,
        eerot=_rpy_to_rot(data.get("ee_offset_rpy", (0.0, 0.0, 0.0))),
        eetrans=np.asarray(data.get("ee_offset_xyz", (0.0, 0.0, 0.0)), dtype=float),
        gravity=np.asarray(data.get("gravity", (0.0, 0.0, -9.81)), dtype=float),
        q_min=q_min, q_max=q_max, qd_max=qd_max, tau_max=tau_max,
        home=np.asarray(data.get("home", np.zeros(n)), dtype=float),
        geoms=geoms)
    return _validate(model)


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

def forward_kinematics(model: RobotModel, q: np.ndarray, frame: str = "ee") -> Pose:
    """World pose of a named frame."""
    R_all, p_all = _k.fk_all(np.ascontiguousarray(q, dtype=np.float64), *model.kin)
    idx, off = model.frame(frame)
    if frame == "ee":
        return Pose(R_all[model.nq], p_all[model.nq])
    return Pose(R_all[idx], p_all[idx]) @ off


def frame_jacobian(model: RobotModel, q: np.ndarray, frame: str = "ee",
                   local: bool = False) -> np.ndarray:
    """Geometric Jacobian (6, n) of a named frame, rows (linear; angular).

    World-frame by default; with local=True the twist is expressed in the
    frame's own coordinates (what the spring-damper contact model uses).
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    R_all, p_all = _k.fk_all(q, *model.kin)
    idx, off = model.frame(frame)
    crot = np.ascontiguousarray(off.rotation)
    ctrans = np.ascontiguousarray(off.translation)
    if local:
        return _k.frame_jacobian_local(q, R_all, p_all, model.jaxis, idx, crot, ctrans)
    pt = p_all[idx] + R_all[idx] @ ctrans
    return _k.point_jacobian_world(q, R_all, p_all, model.jaxis, idx, pt)


def frame_velocity(model: RobotModel, q, qd, frame: str = "ee",
                   local: bool = False) -> np.ndarray:
    return frame_jacobian(model, q, frame, local) @ np.asarray(qd, dtype=float)


def null_space_projector(model: RobotModel, q: np.ndarray,
                         frame: str = "ee") -> np.ndarray:
    """N = I - pinv(J) J for the frame's task Jacobian.

    Near singularities (smallest singular value < 1e-8) the pseudo-inverse is
    damped with 1e-4 to keep the projector bounded.
    """
    J = frame_jacobian(model, q, frame)
    sigma = np.linalg.svd(J, compute_uv=False)
    if sigma[-1] < 1e-8:
        JJt = J @ J.T + 1e-4 * np.eye(J.shape[0])
        J_pinv = J.T @ np.linalg.inv(JJt)
    else:
        J_pinv = np.linalg.pinv(J)
    return np.eye(model.nq) - J_pinv @ J


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def mass_matrix(model: RobotModel, q) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=np.float64)
    return _k.crba(q, *model.kin, model.mass, model.com, model.inertia)


def inverse_dynamics(model: RobotModel, q, qd, qdd) -> np.ndarray:
    """Joint torques realizing qdd at (q, qd), gravity included."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd = np.ascontiguousarray(qd, dtype=np.float64)
    qdd = np.ascontiguousarray(qdd, dtype=np.float64)
    return _k.rnea(q, qd, qdd, *model.kin, model.mass, model.com,
                   model.inertia, model.gravity)


def bias_forces(model: RobotModel, q, qd) -> np.ndarray:
    """Coriolis, centrifugal, and gravity torques."""
    return inverse_dynamics(model, q, qd, np.zeros(model.nq))


def gravity_torque(model: RobotModel, q) -> np.ndarray:
    return inverse_dynamics(model, q, np.zeros(model.nq), np.zeros(model.nq))


def forward_dynamics(model: RobotModel, q, qd, tau,
                     ext_wrench=None, frame: str = "ee") -> np.ndarray:
    """qdd given torques and an optional frame-local external wrench."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd = np.ascontiguousarray(qd, dtype=np.float64)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    tau_ext = np.zeros(model.nq)
    if ext_wrench is not None:
        Jloc = frame_jacobian(model, q, frame, local=True)
        tau_ext = Jloc.T @ np.asarray(ext_wrench, dtype=float)
    return _k.forward_dynamics(q, qd, tau, tau_ext, *model.dyn)


def _interaction_args(model: RobotModel, interaction):
    if interaction is None:
        return (False, 0, np.eye(3), np.zeros(3), np.zeros(6), np.zeros(6),
                np.eye(3), np.zeros(3), -1.0)
    idx, off = model.frame(interaction.frame)
    return (True, idx, np.ascontiguousarray(off.rotation),
            np.ascontiguousarray(off.translation),
            np.ascontiguousarray(interaction.stiffness, dtype=np.float64),
            np.ascontiguousarray(interaction.damping, dtype=np.float64),
            np.ascontiguousarray(interaction.anchor.rotation),
            np.ascontiguousarray(interaction.anchor.translation),
            float(interaction.sign))


def step(model: RobotModel, x, u, dt: float, interaction=None) -> np.ndarray:
    """Explicit-Euler discrete step of the planner dynamics.

    x = (q, qd) length 2n, u torques length n; the optional interaction is a
    spring-damper contact acting at its frame for the whole step.
    """
    n = model.nq
    x = np.ascontiguousarray(x, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    has, idx, crot, ctrans, kd, dd, ar, at, sg = _interaction_args(model, interaction)
    q, qd = _k.step_euler(x[:n], x[n:], u, dt, has, *model.dyn,
                          idx, crot, ctrans, kd, dd, ar, at, sg)
    return np.concatenate([q, qd])


def step_derivatives(model: RobotModel, x, u, dt: float, interaction=None,
                     fd_step: float = _FD_STEP):
    """Discrete transition Jacobians (A, B) of `step` at (x, u).

    Rigid-body terms by central differences of the continuous dynamics with
    the contact wrench frozen; the wrench's own state dependence enters
    analytically via its stiffness/damping times the contact Jacobian.
    """
    n = model.nq
    x = np.ascontiguousarray(x, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    has, idx, crot, ctrans, kd, dd, ar, at, sg = _interaction_args(model, interaction)
    A, B = _k.step_derivatives_fd(x[:n], x[n:], u, dt, fd_step, has,
                                  *model.dyn, idx, crot, ctrans, kd, dd,
                                  ar, at, sg)
    return A, B
