"""Scenario definitions: robot, references, obstacles, environment, planner.

A scenario is a JSON document; bundled ones load by bare name
(`Scenario.load("scenario1_sphere")`).  Reference tracks are evaluated at
absolute simulation time; an optional settle interval holds the motion and
force references at their initial value so the controller can converge
before the task starts.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .collision import CollisionWorld, Obstacle
from .costs import CycleReferences
from .geometry import Pose, pose_diff
from .interaction import InteractionModel
from .planner import PlannerConfig
from .robot import RobotModel, load_model


def _interp_waypoints(times, points, t):
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if t <= times[0]:
        return points[0].copy()
    if t >= times[-1]:
        return points[-1].copy()
    i = int(np.searchsorted(times, t)) - 1
    a = (t - times[i]) / (times[i + 1] - times[i])
    return (1.0 - a) * points[i] + a * points[i + 1]


@dataclass(frozen=True)
class MotionTrack:
    """Pose reference over time; orientation is held fixed."""

    kind: str
    params: dict
    orientation: np.ndarray  # quaternion (w, x, y, z)

    @staticmethod
    def from_dict(obj: dict) -> "MotionTrack":
        quat = np.asarray(obj.get("orientation_wxyz", (1.0, 0.0, 0.0, 0.0)),
                          dtype=float)
        return MotionTrack(obj["type"], {k: v for k, v in obj.items()
                                         if k not in ("type", "orientation_wxyz")},
                           quat)

    def position(self, t: float) -> np.ndarray:
        p = self.params
        if self.kind == "setpoint":
            return np.asarray(p["position"], dtype=float)
        if self.kind == "lemniscate":
            c = np.asarray(p["center"], dtype=float)
            a = float(p["half_width"])
            th = 2.0 * np.pi * t / float(p["period"])
            den = 1.0 + np.sin(th) ** 2
            return c + np.array([a * np.cos(th) / den,
                                 a * np.sin(th) * np.cos(th) / den, 0.0])
        if self.kind == "circle":
            c = np.asarray(p["center"], dtype=float)
            r = float(p["radius"])
            ph = 2.0 * np.pi * t / float(p["period"]) + float(p.get("phase", 0.0))
            return c + np.array([r * np.cos(ph), r * np.sin(ph), 0.0])
        if self.kind == "waypoints":
            return _interp_waypoints(p["times"], p["positions"], t)
        raise ValueError(f"unknown motion track {self.kind!r}")

    def pose(self, t: float) -> Pose:
        return Pose.from_quat(self.position(t), self.orientation)

    def body_velocity(self, t: float, h: float = 1e-4) -> np.ndarray:
        """Reference twist in the reference frame, by finite differences."""
        return pose_diff(self.pose(t), self.pose(t + h)) / h


@dataclass(frozen=True)
class ForceTrack:
    """Reference wrench over time, frame-local to the contact frame.

    JSON values use the applied-force convention: positive along the
    pressing direction (anchor +z), i.e. the force the robot exerts on the
    environment.  Scenario.force_wrench flips the sign once so everything
    downstream works with the environment-on-robot wrench the interaction
    model produces.
    """

    kind: str
    params: dict

    @staticmethod
    def from_dict(obj) -> "ForceTrack":
        if obj is None:
            return ForceTrack("none", {})
        return ForceTrack(obj["type"], {k: v for k, v in obj.items() if k != "type"})

    @property
    def active(self) -> bool:
        return self.kind != "none"

    def wrench(self, t: float) -> np.ndarray:
        out = np.zeros(6)
        if self.kind == "none":
            return out
        p = self.params
        if self.kind == "constant":
            out = np.asarray(p["wrench"], dtype=float)
            ramp = float(p.get("ramp", 0.0))
            if ramp > 0.0:
                out = out * min(1.0, max(0.0, t / ramp))
            return out
        if self.kind == "sine":
            axis = int(p.get("axis", 2))
            out[axis] = (float(p["amplitude"])
                         * np.sin(float(p["omega"]) * t + float(p.get("phase", 0.0)))
                         + float(p.get("offset", 0.0)))
            return out
        raise ValueError(f"unknown force track {self.kind!r}")


@dataclass
class ObstacleSpec:
    obstacle: Obstacle
    track_times: np.ndarray = None
    track_points: np.ndarray = None

    @staticmethod
    def from_dict(obj: dict) -> "ObstacleSpec":
        obs = Obstacle.from_dict(obj)
        tr = obj.get("track")
        if tr is None or tr.get("type", "static") == "static":
            return ObstacleSpec(obs)
        assert tr["type"] == "waypoints"
        return ObstacleSpec(obs, np.asarray(tr["times"], dtype=float),
                            np.asarray(tr["positions"], dtype=float))

    def offset(self, t: float) -> np.ndarray:
        if self.track_times is None:
            return np.zeros(3)
        p = _interp_waypoints(self.track_times, self.track_points, t)
        return p - self.track_points[0]


@dataclass
class Scenario:
    name: str
    robot: str
    duration: float
    q0: object  # "home" or list of joint angles
    settle: float
    control: dict
    planner: PlannerConfig
    motion: MotionTrack
    force: ForceTrack
    interaction: InteractionModel
    environment: dict  # plant-side contact: model + unilateral gate flag
    obstacles: list

    @staticmethod
    def from_dict(data: dict) -> "Scenario":
        inter = None
        if "interaction" in data:
            inter = InteractionModel.from_dict(data["interaction"])
        env = data.get("environment")
        if env is None and inter is not None:
            env = {"gate": True}
        return Scenario(
            name=data["name"],
            robot=data.get("robot", "panda7"),
            duration=float(data["duration"]),
            q0=data.get("q0", "home"),
            settle=float(data.get("settle", 0.0)),
            control=dict(data.get("control", {})),
            planner=PlannerConfig.from_dict(data.get("planner", {})),
            motion=MotionTrack.from_dict(data["motion_reference"]),
            force=ForceTrack.from_dict(data.get("force_reference")),
            interaction=inter,
            environment=env,
            obstacles=[ObstacleSpec.from_dict(o)
                       for o in data.get("obstacles", ())])

    @staticmethod
    def load(source) -> "Scenario":
        if isinstance(source, dict):
            return Scenario.from_dict(source)
        if isinstance(source, (str, Path)) and not str(source).endswith(".json"):
            text = resources.files("tompc.data").joinpath(f"{source}.json").read_text()
            return Scenario.from_dict(json.loads(text))
        return Scenario.from_dict(json.loads(Path(source).read_text()))

    # -- accessors -----------------------------------------------------------

    def load_robot(self) -> RobotModel:
        return load_model(self.robot)

    def q0_array(self, model: RobotModel) -> np.ndarray:
        if isinstance(self.q0, str):
            assert self.q0 == "home"
            return model.home.copy()
        return np.asarray(self.q0, dtype=float)

    def make_world(self, model: RobotModel) -> CollisionWorld:
        return CollisionWorld(model, [copy.deepcopy(s.obstacle)
                                      for s in self.obstacles])

    def planner_config(self, mode: str = None) -> PlannerConfig:
        from dataclasses import replace
        if mode is None or mode == self.planner.mode:
            return self.planner
        return replace(self.planner, mode=mode)

    def task_time(self, t: float) -> float:
        return max(0.0, t - self.settle)

    def motion_pose(self, t: float) -> Pose:
        return self.motion.pose(self.task_time(t))

    def force_wrench(self, t: float) -> np.ndarray:
        """Reference wrench in the environment-on-robot convention."""
        return -self.force.wrench(self.task_time(t))

    def cycle_refs(self, t: float, horizon: int, dt: float) -> CycleReferences:
        times = t + dt * np.arange(horizon + 1)
        poses = [self.motion_pose(tk) for tk in times]
        forces = np.stack([self.force_wrench(tk) for tk in times])
        return CycleReferences(poses, forces)

    def place_obstacles(self, world: CollisionWorld, t: float):
        """Move tracked obstacles to their pose at time t."""
        moved = False
        for spec, obs in zip(self.obstacles, world.obstacles):
            off = spec.offset(t)
            if spec.track_times is None:
                continue
            moved = True
            base = spec.obstacle
            if obs.kind == "sphere":
                obs.center = base.center + off
            elif obs.kind == "capsule":
                obs.p1 = base.p1 + off
                obs.p2 = base.p2 + off
            else:
                obs.pose = Pose(base.pose.rotation, base.pose.translation + off)
        if moved:
            world.invalidate()

    def plant_contact(self, model: RobotModel):
        """(InteractionModel, gate) the simulated plant applies, or None.

        Defaults to the planner's interaction model with a unilateral gate;
        an explicit environment block can override parameters to create
        model mismatch.
        """
        if self.environment is None and self.interaction is None:
            return None
        base = self.interaction
        env = dict(self.environment or {})
        gate = bool(env.pop("gate", True))
        if env:
            merged = {
                "frame": env.get("frame", base.frame if base else "ee"),
                "stiffness": env.get("stiffness",
                                     base.stiffness if base else np.zeros(6)),
                "damping": env.get("damping",
                                   base.damping if base else np.zeros(6)),
                "anchor": env.get("anchor"),
                "sign": env.get("sign", base.sign if base else -1.0),
            }
            if merged["anchor"] is None:
                merged["anchor"] = base.anchor.serialize() if base else \
                    Pose.identity().serialize()
            elif not isinstance(merged["anchor"], dict):
                merged["anchor"] = merged["anchor"].serialize()
            model_ = InteractionModel.from_dict(merged)
        else:
            model_ = base
        if model_ is None:
            return None
        return model_, gate
