"""Capsule-based robot collision geometry against world obstacles.

Distances are closed-form for sphere and capsule obstacles; boxes use a
convex line search along the capsule axis.  Every query returns witness
points and a unit normal pointing from the obstacle toward the robot, so
the distance gradient with respect to q is normal . J_witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .geometry import Pose
from .robot import RobotModel

_KIND = {"sphere": 0, "capsule": 1, "box": 2}


@dataclass
class Obstacle:
    """World-frame obstacle; fields depend on kind.

    sphere: center + radius; capsule: p1, p2 + radius; box: pose + half
    extents.  Mutable so scenarios can move obstacles between cycles.
    """

    name: str
    kind: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    p1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pose: Pose = field(default_factory=Pose.identity)
    half_extents: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        assert self.kind in _KIND, f"unknown obstacle kind {self.kind!r}"
        self.center = np.asarray(self.center, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        self.p2 = np.asarray(self.p2, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)

    @staticmethod
    def from_dict(obj: dict) -> "Obstacle":
        kind = obj["type"]
        if kind == "sphere":
            return Obstacle(obj["name"], kind, center=obj["center"],
                            radius=float(obj["radius"]))
        if kind == "capsule":
            return Obstacle(obj["name"], kind, p1=obj["p1"], p2=obj["p2"],
                            radius=float(obj["radius"]))
        if kind == "box":
            pose = Pose.deserialize(obj["pose"]) if "pose" in obj else \
                Pose(np.eye(3), np.asarray(obj["center"], dtype=float))
            return Obstacle(obj["name"], kind, pose=pose,
                            half_extents=obj["half_extents"])
        raise ValueError(f"unknown obstacle kind {kind!r}")


@dataclass(frozen=True)
class DistanceResult:
    """One pair query: separation (negative if penetrating) and witnesses."""

    geom: str
    obstacle: str
    link: int
    distance: float
    point_robot: np.ndarray
    point_obstacle: np.ndarray
    normal: np.ndarray  # unit, obstacle -> robot


class CollisionWorld:
    """All active (robot capsule, obstacle) pairs plus query bookkeeping.

    query() evaluates every pair once and counts invocations, which lets the
    planner's query-once-per-cycle policy be asserted in tests.  While a pair
    penetrates, its last separated normal is substituted so gradients keep
    pushing outward.
    """

    def __init__(self, model: RobotModel, obstacles=()):
        self.model = model
        self.obstacles: list[Obstacle] = list(obstacles)
        self.query_count = 0
        self._last_normal: dict = {}
        self._packed = None

    def add_obstacle(self, obs: Obstacle):
        self.obstacles.append(obs)
        self._packed = None

    def obstacle(self, name: str) -> Obstacle:
        for o in self.obstacles:
            if o.name == name:
                return o
        raise KeyError(name)

    def invalidate(self):
        """Call after moving an obstacle in place."""
        self._packed = None

    @property
    def pairs(self) -> list:
        return [(g.name, o.name) for g in self.model.geoms for o in self.obstacles]

    def _pack(self):
        if self._packed is not None:
            return self._packed
        geoms = self.model.geoms
        m = len(geoms) * len(self.obstacles)
        plink = np.zeros(m, dtype=np.int64)
        pe1 = np.zeros((m, 3))
        pe2 = np.zeros((m, 3))
        prad = np.zeros(m)
        okind = np.zeros(m, dtype=np.int64)
        oe1 = np.zeros((m, 3))
        oe2 = np.zeros((m, 3))
        orot = np.zeros((m, 3, 3))
        oc = np.zeros((m, 3))
        osize = np.zeros((m, 3))
        k = 0
        for g in geoms:
            for o in self.obstacles:
                plink[k] = g.link
                pe1[k] = g.p1
                pe2[k] = g.p2
                prad[k] = g.radius
                okind[k] = _KIND[o.kind]
                orot[k] = np.eye(3)
                if o.kind == "sphere":
                    oc[k] = o.center
                    osize[k, 0] = o.radius
                elif o.kind == "capsule":
                    oe1[k] = o.p1
                    oe2[k] = o.p2
                    osize[k, 0] = o.radius
                else:
                    orot[k] = o.pose.rotation
                    oc[k] = o.pose.translation
                    osize[k] = o.half_extents
                k += 1
        self._packed = (plink, pe1, pe2, prad, okind, oe1, oe2, orot, oc, osize)
        return self._packed

    def query(self, q: np.ndarray) -> list[DistanceResult]:
        """Evaluate every pair at q; one invocation counts as one query."""
        self.query_count += 1
        q = np.ascontiguousarray(q, dtype=np.float64)
        R_all, p_all = _k.fk_all(q, *self.model.kin)
        out = []
        k = 0
        packed = self._pack()
        for g in self.model.geoms:
            a1 = p_all[g.link] + R_all[g.link] @ g.p1
            a2 = p_all[g.link] + R_all[g.link] @ g.p2
            for o in self.obstacles:
                d, pa, pb, nrm = _k.pair_distance(
                    a1, a2, g.radius, packed[4][k], packed[5][k], packed[6][k],
                    packed[7][k], packed[8][k], packed[9][k])
                key = (g.name, o.name)
                if d <= 0.0 and key in self._last_normal:
                    nrm = self._last_normal[key]
                elif d > 0.0:
                    self._last_normal[key] = nrm
                out.append(DistanceResult(g.name, o.name, g.link, float(d),
                                          pa, pb, nrm))
                k += 1
        return out

    def distances_only(self, q: np.ndarray) -> np.ndarray:
        """Fast distances-per-pair vector for logging; not counted as a query."""
        q = np.ascontiguousarray(q, dtype=np.float64)
        if not self.obstacles:
            return np.empty(0)
        return _k.all_pair_distances(q, *self.model.kin, *self._pack())

    def min_distance(self, q: np.ndarray) -> float:
        d = self.distances_only(q)
        return float(d.min()) if d.size else np.inf


def distance_gradient(model: RobotModel, q: np.ndarray,
                      res: DistanceResult) -> np.ndarray:
    """d distance / d q: the normal projected through the witness Jacobian.

    The obstacle side is static, so only the robot witness moves with q.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    R_all, p_all = _k.fk_all(q, *model.kin)
    J = _k.point_jacobian_world(q, R_all, p_all, model.jaxis, res.link,
                                np.ascontiguousarray(res.point_robot))
    return res.normal @ J[:3]


@dataclass(frozen=True)
class LinearizedDistances:
    """First-order model d(q) ~ values + rows (q - q0) for a set of pairs."""

    q0: np.ndarray
    values: np.ndarray  # (m,)
    rows: np.ndarray    # (m, n)

    def predict(self, q: np.ndarray) -> np.ndarray:
        return self.values + self.rows @ (np.asarray(q) - self.q0)


def linearize_distances(model: RobotModel, q: np.ndarray,
                        results: list[DistanceResult]) -> LinearizedDistances:
    q = np.asarray(q, dtype=float)
    m = len(results)
    rows = np.zeros((m, model.nq))
    vals = np.zeros(m)
    for i, r in enumerate(results):
        vals[i] = r.distance
        rows[i] = distance_gradient(model, q, r)
    return LinearizedDistances(q.copy(), vals, rows)


def assemble_constraints(lin: LinearizedDistances, d_min: float):
    """Half-space rows C q >= lower enforcing predicted distance >= d_min."""
    C = lin.rows
    lower = d_min - lin.values + C @ lin.q0
    return C, lower
