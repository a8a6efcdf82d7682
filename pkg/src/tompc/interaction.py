"""Spring-damper contact model acting at a robot frame.

The environment is a 6-D spring anchored at a fixed pose plus a damper on
the frame's body twist:

    F = sign * (K * log(anchor^-1 X(q)) + D * J_local(q) qd)

with diagonal stiffness K and damping D.  The default sign = -1 makes the
spring restoring and the damper dissipative; F is the wrench the environment
exerts on the robot, expressed in the contact frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .geometry import Pose
from .robot import RobotModel


@dataclass(frozen=True)
class InteractionModel:
    """Contact parameters; stiffness/damping are the diagonals (len 6)."""

    frame: str = "ee"
    stiffness: np.ndarray = field(default_factory=lambda: np.zeros(6))
    damping: np.ndarray = field(default_factory=lambda: np.zeros(6))
    anchor: Pose = field(default_factory=Pose.identity)
    sign: float = -1.0

    def __post_init__(self):
        k = np.asarray(self.stiffness, dtype=float)
        d = np.asarray(self.damping, dtype=float)
        assert k.shape == (6,) and d.shape == (6,)
        assert np.all(k >= 0) and np.all(d >= 0)
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "damping", d)

    @staticmethod
    def from_dict(obj: dict) -> "InteractionModel":
        return InteractionModel(
            frame=obj.get("frame", "ee"),
            stiffness=np.asarray(obj["stiffness"], dtype=float),
            damping=np.asarray(obj.get("damping", np.zeros(6)), dtype=float),
            anchor=Pose.deserialize(obj["anchor"]),
            sign=float(obj.get("sign", -1.0)))


def contact_wrench(model: RobotModel, q, qd, interaction: InteractionModel
                   ) -> np.ndarray:
    """Environment wrench on the robot at the contact frame, frame-local."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    qd = np.ascontiguousarray(qd, dtype=np.float64)
    idx, off = model.frame(interaction.frame)
    F, _ = _k.contact_wrench(
        q, qd, *model.kin, idx,
        np.ascontiguousarray(off.rotation), np.ascontiguousarray(off.translation),
        interaction.stiffness, interaction.damping,
        np.ascontiguousarray(interaction.anchor.rotation),
        np.ascontiguousarray(interaction.anchor.translation),
        float(interaction.sign))
    return F


def wrench_partials(model: RobotModel, q, qd, interaction: InteractionModel):
    """First-order wrench sensitivities (dF/dq, dF/dqd, dF/du).

    Uses the stiffness/damping structure through the contact Jacobian:
    dF/dq = sign K J_local, dF/dqd = sign D J_local, dF/du = 0.  The q
    partial drops the pose-log curvature and Jacobian rate terms, so it is
    first-order accurate near the anchor.
    """
    from .robot import frame_jacobian

    Jloc = frame_jacobian(model, q, interaction.frame, local=True)
    s = float(interaction.sign)
    dq = s * np.diag(interaction.stiffness) @ Jloc
    dqd = s * np.diag(interaction.damping) @ Jloc
    du = np.zeros((6, model.nq))
    return dq, dqd, du
