"""Closed-loop simulation harness.

Control stack per tick (1 kHz by default):

    planner (every planner dt, zero-order hold)
      -> tau_des = clamp(tau_ff + Kp (q_des - q) + Kd (qd_des - qd))
      -> plant: RK4 at substep resolution, torque held across the tick

The plant applies the scenario's contact model unilaterally (force only
while penetrating), which is intentionally not the planner's integrator or
its bilateral spring model.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as _k
from .geometry import Pose, pose_diff
from .interaction import InteractionModel
from .planner import Planner, PlannerConfig
from .robot import (RobotModel, forward_kinematics, frame_jacobian,
                    inverse_dynamics, load_model, mass_matrix, bias_forces)
from .scenarios import Scenario


@dataclass
class SimLog:
    """Tick-rate series plus per-cycle planner diagnostics."""

    scenario: str
    mode: str
    seed: int
    pair_names: list
    dt: float
    t: np.ndarray = None
    q: np.ndarray = None
    qd: np.ndarray = None
    tau_des: np.ndarray = None
    tau_ff: np.ndarray = None
    ee_pos: np.ndarray = None
    ee_quat: np.ndarray = None
    wrench: np.ndarray = None
    distances: np.ndarray = None
    pos_ref: np.ndarray = None
    force_ref: np.ndarray = None
    cycle_of_tick: np.ndarray = None
    # one row per planner cycle
    cyc_t: np.ndarray = None
    cyc_iters: np.ndarray = None
    cyc_residual: np.ndarray = None
    cyc_time_us: np.ndarray = None
    cyc_min_dist: np.ndarray = None
    cyc_relax: np.ndarray = None

    def min_distance(self) -> float:
        return float(self.distances.min()) if self.distances.size else np.inf


class IDController:
    """Task-space computed-torque tracker, force- and obstacle-blind.

    tau = M J^+ (Kp e + Kd (v_ref - v)) + bias; stiff gains make it slam
    into contact instead of regulating force.
    """

    def __init__(self, model: RobotModel, scenario: Scenario,
                 kp: float = 400.0, kd: float = 40.0, frame: str = "ee"):
        self.model = model
        self.scenario = scenario
        self.kp = kp
        self.kd = kd
        self.frame = frame

    def torque(self, t: float, x: np.ndarray) -> np.ndarray:
        model = self.model
        n = model.nq
        q, qd = x[:n], x[n:]
        X = forward_kinematics(model, q, self.frame)
        ref = self.scenario.motion_pose(t)
        err = pose_diff(X, ref)  # toward the reference, body frame
        vref = self.scenario.motion.body_velocity(self.scenario.task_time(t))
        J = frame_jacobian(model, q, self.frame, local=True)
        acc_task = self.kp * err + self.kd * (vref - J @ qd)
        qdd_des = np.linalg.lstsq(J, acc_task, rcond=None)[0]
        tau = mass_matrix(model, q) @ qdd_des + bias_forces(model, q, qd)
        return np.clip(tau, -model.tau_max, model.tau_max)


def _plant_args(model: RobotModel, contact):
    if contact is None:
        return (False, 0, 0, np.eye(3), np.zeros(3), np.zeros(6), np.zeros(6),
                np.eye(3), np.zeros(3), -1.0)
    inter, gate = contact
    idx, off = model.frame(inter.frame)
    return (True, 1 if gate else 0, idx,
            np.ascontiguousarray(off.rotation),
            np.ascontiguousarray(off.translation),
            np.ascontiguousarray(inter.stiffness, dtype=np.float64),
            np.ascontiguousarray(inter.damping, dtype=np.float64),
            np.ascontiguousarray(inter.anchor.rotation),
            np.ascontiguousarray(inter.anchor.translation),
            float(inter.sign))


def simulate(scenario: Scenario, mode: str = None, seed: int = 0,
             capture_plans: list = None) -> SimLog:
    """Run the scenario closed loop and return the full log.

    mode overrides the scenario's planner mode; "id" replaces the planner
    with the inverse-dynamics tracking baseline.  The seed perturbs the
    initial configuration reproducibly.  If capture_plans is a list, the
    full PlannerOutput of every cycle is appended to it (constraint audits).
    """
    model = scenario.load_robot()
    world = scenario.make_world(model)
    n = model.nq
    run_mode = mode or scenario.planner.mode

    rng = np.random.default_rng(seed)
    q = scenario.q0_array(model) + rng.uniform(-1e-3, 1e-3, size=n)
    q = np.clip(q, model.q_min, model.q_max)
    x = np.concatenate([q, np.zeros(n)])

    tick_dt = float(scenario.control.get("tick_dt", 0.001))
    substeps = int(scenario.control.get("substeps", 10))
    kp = float(scenario.control.get("kp", 30.0)) * np.ones(n)
    kd = float(scenario.control.get("kd", 3.0)) * np.ones(n)

    contact = scenario.plant_contact(model)
    pargs = _plant_args(model, contact)
    env_on, gate, cidx, crot, ctrans, kdiag, ddiag, arot, atrans, sgn = pargs

    if run_mode == "id":
        planner = None
        controller = IDController(model, scenario)
        plan_every = 1
        cfg = scenario.planner_config()
    else:
        cfg = scenario.planner_config(run_mode)
        planner = Planner(model, world, cfg, scenario.interaction)
        controller = None
        plan_every = max(1, round(cfg.dt / tick_dt))

    ticks = int(round(scenario.duration / tick_dt))
    npairs = len(world.pairs)
    log = SimLog(scenario.name, run_mode, seed, world.pairs, tick_dt)
    log.t = np.zeros(ticks)
    log.q = np.zeros((ticks, n))
    log.qd = np.zeros((ticks, n))
    log.tau_des = np.zeros((ticks, n))
    log.tau_ff = np.zeros((ticks, n))
    log.ee_pos = np.zeros((ticks, 3))
    log.ee_quat = np.zeros((ticks, 4))
    log.wrench = np.zeros((ticks, 6))
    log.distances = np.zeros((ticks, npairs))
    log.pos_ref = np.zeros((ticks, 3))
    log.force_ref = np.zeros((ticks, 6))
    log.cycle_of_tick = np.zeros(ticks, dtype=int)
    cyc = {k: [] for k in ("t", "iters", "residual", "time_us", "min_dist",
                           "relax")}

    q_des = x[:n].copy()
    qd_des = np.zeros(n)
    tau_ff = np.zeros(n)
    cycle_idx = -1
    for i in range(ticks):
        t = i * tick_dt
        scenario.place_obstacles(world, t)
        if planner is not None and i % plan_every == 0:
            refs = scenario.cycle_refs(t, cfg.horizon, cfg.dt)
            out = planner.plan(x, refs)
            if capture_plans is not None:
                capture_plans.append(out)
            q_des, qd_des, tau_ff = out.q_des, out.qd_des, out.tau_ff
            cycle_idx += 1
            cyc["t"].append(t)
            cyc["iters"].append(out.iterations)
            cyc["residual"].append(out.residual)
            cyc["time_us"].append(out.solve_time_us)
            cyc["min_dist"].append(out.min_distance)
            cyc["relax"].append(out.relax)

        if controller is not None:
            tau_des = controller.torque(t, x)
            tau_ff_i = tau_des
        else:
            pd = kp * (q_des - x[:n]) + kd * (qd_des - x[n:])
            tau_des = np.clip(tau_ff + pd, -model.tau_max, model.tau_max)
            tau_ff_i = tau_ff

        X = forward_kinematics(model, x[:n])
        F = _k.plant_measured_wrench(x[:n], x[n:], env_on, gate, *model.kin,
                                     cidx, crot, ctrans, kdiag, ddiag,
                                     arot, atrans, sgn)
        log.t[i] = t
        log.q[i] = x[:n]
        log.qd[i] = x[n:]
        log.tau_des[i] = tau_des
        log.tau_ff[i] = tau_ff_i
        log.ee_pos[i] = X.translation
        log.ee_quat[i] = X.to_quat()
        log.wrench[i] = F
        if npairs:
            log.distances[i] = world.distances_only(x[:n])
        log.pos_ref[i] = scenario.motion_pose(t).translation
        log.force_ref[i] = scenario.force_wrench(t)
        log.cycle_of_tick[i] = cycle_idx

        qn, qdn = _k.plant_tick(x[:n], x[n:], tau_des, tick_dt, substeps,
                                env_on, gate, *model.dyn, cidx, crot, ctrans,
                                kdiag, ddiag, arot, atrans, sgn)
        x = np.concatenate([qn, qdn])

    log.cyc_t = np.asarray(cyc["t"])
    log.cyc_iters = np.asarray(cyc["iters"], dtype=int)
    log.cyc_residual = np.asarray(cyc["residual"])
    log.cyc_time_us = np.asarray(cyc["time_us"])
    log.cyc_min_dist = np.asarray(cyc["min_dist"])
    log.cyc_relax = np.asarray(cyc["relax"])
    return log


# ---------------------------------------------------------------------------
# Metrics and file outputs
# ---------------------------------------------------------------------------

def _highpass_ptp(t: np.ndarray, y: np.ndarray, cutoff_hz: float) -> float:
    """Peak-to-peak of the component above cutoff (moving-average removal)."""
    if y.size < 4:
        return 0.0
    dt = float(t[1] - t[0])
    win = max(1, int(round(1.0 / (cutoff_hz * dt))))
    pad = np.pad(y, win, mode="edge")
    kernel = np.ones(2 * win + 1) / (2 * win + 1)
    low = np.convolve(pad, kernel, mode="same")[win:-win]
    hf = y - low
    return float(hf.max() - hf.min())


def compute_metrics(log: SimLog, scenario: Scenario) -> dict:
    """Deterministic summary of one run (no wall-clock quantities)."""
    sel = None
    pos_err = np.linalg.norm(log.pos_ref - log.ee_pos, axis=1)
    out = {
        "scenario": log.scenario,
        "mode": log.mode,
        "seed": int(log.seed),
        "duration_s": float(log.t[-1] + log.dt) if log.t.size else 0.0,
        "pos_err_mean_m": float(pos_err.mean()),
        "pos_err_rms_m": float(np.sqrt((pos_err ** 2).mean())),
        "pos_err_max_m": float(pos_err.max()),
        "pos_err_rms_xy_m": float(np.sqrt(
            ((log.pos_ref[:, :2] - log.ee_pos[:, :2]) ** 2).sum(axis=1).mean())),
        "min_distance_m": (float(log.distances.min())
                           if log.distances.size else None),
    }
    if scenario.force.active:
        sel = scenario.planner.weights.force_selection.astype(bool)
        ferr = (log.force_ref - log.wrench)[:, sel]
        fnorm = np.linalg.norm(ferr, axis=1)
        out["force_err_mean_n"] = float(fnorm.mean())
        out["force_err_rms_n"] = float(np.sqrt((fnorm ** 2).mean()))
        fz = log.wrench[:, sel].sum(axis=1)
        out["force_hf_ptp_n"] = _highpass_ptp(log.t, fz, 5.0)
    if log.cyc_iters is not None and log.cyc_iters.size:
        out["admm_iters_mean"] = float(log.cyc_iters.mean())
        out["admm_iters_max"] = int(log.cyc_iters.max())
        out["residual_final"] = float(log.cyc_residual[-1])
    # feedforward share of the commanded torque, per joint then averaged
    num = np.abs(log.tau_ff)
    den = num + np.abs(log.tau_des - log.tau_ff)
    share = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 1.0)
    out["feedforward_share"] = float(share.mean())
    return out


def write_outputs(log: SimLog, scenario: Scenario, out_dir,
                  diagnostics: bool = False) -> dict:
    """Write the run's data files + metrics.json into out_dir.

    Data files: simlog.csv (full series), trajectory_xy.csv, and
    distance_vs_time.csv always; force_vs_time.csv only when the scenario
    has a force task.  Wall-clock diagnostics go to diagnostics.csv only
    when requested so the standard outputs stay reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = log.q.shape[1]
    m = log.distances.shape[1]

    header = (["t"] + [f"q{j+1}" for j in range(n)]
              + [f"qd{j+1}" for j in range(n)]
              + [f"tau_des{j+1}" for j in range(n)]
              + [f"tau_ff{j+1}" for j in range(n)]
              + ["ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz"]
              + [f"wrench{j}" for j in range(6)]
              + [f"dist{j}" for j in range(m)]
              + ["ref_x", "ref_y", "ref_z"]
              + [f"force_ref{j}" for j in range(6)]
              + ["cycle"])
    body = np.hstack([log.t[:, None], log.q, log.qd, log.tau_des, log.tau_ff,
                      log.ee_pos, log.ee_quat, log.wrench, log.distances,
                      log.pos_ref, log.force_ref,
                      log.cycle_of_tick[:, None].astype(float)])
    np.savetxt(out_dir / "simlog.csv", body, delimiter=",", fmt="%.10g",
               header=",".join(header), comments="")

    traj = np.hstack([log.t[:, None], log.ee_pos[:, :2], log.pos_ref[:, :2]])
    np.savetxt(out_dir / "trajectory_xy.csv", traj, delimiter=",",
               fmt="%.10g", header="t,ee_x,ee_y,ref_x,ref_y", comments="")

    dmin = log.distances.min(axis=1, initial=np.inf) if m else \
        np.full_like(log.t, np.inf)
    dd = np.hstack([log.t[:, None], log.distances,
                    np.asarray(dmin)[:, None]])
    np.savetxt(out_dir / "distance_vs_time.csv", dd, delimiter=",",
               fmt="%.10g",
               header=",".join(["t"] + [f"dist{j}" for j in range(m)] + ["min"]),
               comments="")

    if scenario.force.active:
        sel = scenario.planner.weights.force_selection.astype(bool)
        # applied-force convention (positive = pressing) for plotting
        fz = -log.wrench[:, sel].sum(axis=1)
        fzr = -log.force_ref[:, sel].sum(axis=1)
        np.savetxt(out_dir / "force_vs_time.csv",
                   np.column_stack([log.t, fz, fzr]), delimiter=",",
                   fmt="%.10g", header="t,force,force_ref", comments="")

    metrics = compute_metrics(log, scenario)
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n")

    if diagnostics and log.cyc_t is not None and log.cyc_t.size:
        with open(out_dir / "diagnostics.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cycle", "t", "iterations", "residual",
                         "wall_time_us", "min_distance"])
            for k in range(log.cyc_t.size):
                wr.writerow([k, f"{log.cyc_t[k]:.6g}", int(log.cyc_iters[k]),
                             f"{log.cyc_residual[k]:.10g}",
                             f"{log.cyc_time_us[k]:.1f}",
                             f"{log.cyc_min_dist[k]:.10g}"])
    return metrics


def run_suite(scenarios, out_dir, mode: str = None, seed: int = 0) -> dict:
    """Run one or more scenarios; per scenario, write the three data files
    plus metrics.json (force_vs_time.csv additionally for contact tasks)."""
    out_dir = Path(out_dir)
    results = {}
    for sc in ([scenarios] if isinstance(scenarios, (str, Scenario)) else scenarios):
        scenario = sc if isinstance(sc, Scenario) else Scenario.load(sc)
        log = simulate(scenario, mode=mode, seed=seed)
        sub = out_dir / scenario.name if not isinstance(scenarios, (str, Scenario)) \
            else out_dir
        results[scenario.name] = write_outputs(log, scenario, sub)
    return results
