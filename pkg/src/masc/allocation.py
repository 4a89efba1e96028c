"""Epsilon-constraint resource allocation over the sensing/communication split.

Sweeps the minimum-coverage constraint, converts each level into a frame
time split, pairs the achieved effective coverage with the effective
worst-case throughput, prunes dominated points and labels the strategic
operating modes (communication-priority, balanced knee, sensing-priority).

The hybrid sensing design and the robust communication design do not depend
on the swept constraint, so both are solved once per scene and reused
across the sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import mapping as mp
from . import robust as rb
from . import sensing as sn
from .scenario import FrameConfig, ScenarioConfig, build_scene_fields, derive_seed


class InfeasibleConstraintError(ValueError):
    """A coverage constraint cannot be met by any time allocation."""


@dataclass(frozen=True)
class ParetoPoint:
    """(effective coverage, effective capacity) operating point of one sweep level."""

    eta_min_constraint: float
    eta_eff: float
    c_eff_bps_hz: float
    t_sens_s: float
    t_comm_s: float
    precoder_refs: tuple[str, ...] = ("sensing", "comm")
    feasible: bool = True
    mode_label: str = ""


@dataclass(frozen=True)
class SweepResult:
    """Pareto front plus the shared designs the sweep points reference."""

    points: tuple[ParetoPoint, ...]        # all sweep levels, flagged
    front: tuple[ParetoPoint, ...]         # feasible, non-dominated
    eta_cov_star: float
    c_wc_star: float
    designs: dict = field(default_factory=dict)


def min_sensing_time(eta_min: float, eta_cov_star: float, t_frame: float,
                     floor_s: float = 0.0) -> float:
    """Minimum sensing time eta_min * T_frame / eta_cov*, clamped to the frame.

    Raises when the constraint is positive but the achievable coverage is
    zero; values above the frame length signal infeasibility to the caller
    via the clamp (the sweep flags them).
    """
    if eta_min < 0.0:
        raise ValueError("eta_min must be >= 0")
    if eta_cov_star <= 0.0:
        if eta_min > 0.0:
            raise InfeasibleConstraintError(
                "positive coverage constraint with zero achievable coverage"
            )
        return min(max(floor_s, 0.0), t_frame)
    t = eta_min * t_frame / eta_cov_star
    return min(max(t, floor_s), t_frame)


def effective_throughput(c_wc: float, t_sens_min: float, t_frame: float) -> float:
    """Effective rate C_wc * (T_frame - T_sens) / T_frame; zero at full sensing."""
    if t_sens_min > t_frame:
        raise ValueError("t_sens_min must not exceed t_frame")
    return c_wc * (t_frame - t_sens_min) / t_frame


def sweep_point(eta_min: float, eta_cov_star: float, c_wc: float,
                frame: FrameConfig, t_comm_limit_s: float) -> ParetoPoint:
    """One sweep level of the time-split decomposition.

    T_sens = eta_min T / eta*; T_comm* = min(T - T_sens, limit);
    eta_eff = eta* (T - T_comm*) / T; c_eff = C_wc T_comm* / T. Constraint
    levels above the achievable coverage come back flagged infeasible with
    the full frame devoted to sensing.
    """
    t_frame = frame.t_frame_s
    feasible = True
    try:
        t_sens = min_sensing_time(eta_min, eta_cov_star, t_frame,
                                  floor_s=frame.t_sens_min_s)
    except InfeasibleConstraintError:
        feasible = False
        t_sens = t_frame
    if eta_min > eta_cov_star * (1.0 + 1e-12):
        feasible = False
        t_sens = t_frame
    t_comm = min(t_frame - t_sens, t_comm_limit_s)
    return ParetoPoint(
        eta_min_constraint=eta_min,
        eta_eff=eta_cov_star * (t_frame - t_comm) / t_frame,
        c_eff_bps_hz=c_wc * t_comm / t_frame,
        t_sens_s=t_frame - t_comm,
        t_comm_s=t_comm,
        feasible=feasible,
    )


def prune_dominated(points) -> list[ParetoPoint]:
    """Non-dominated subset under (eta_eff, c_eff) with first-wins duplicates.

    A point is kept iff no other point is at least as good on both axes and
    strictly better on one; exact duplicates keep the earliest occurrence.
    Output is sorted by eta_eff ascending (stable).
    """
    pts = list(points)
    kept = []
    for i, p in enumerate(pts):
        dominated = False
        for j, q in enumerate(pts):
            if i == j:
                continue
            if (q.eta_eff, q.c_eff_bps_hz) == (p.eta_eff, p.c_eff_bps_hz):
                if j < i:
                    dominated = True  # duplicate: keep the first occurrence
                    break
                continue
            if (q.eta_eff >= p.eta_eff and q.c_eff_bps_hz >= p.c_eff_bps_hz):
                dominated = True
                break
        if not dominated:
            kept.append(p)
    return sorted(kept, key=lambda p: p.eta_eff)


def epsilon_constraint_sweep(
    scene: ScenarioConfig,
    eta_range: tuple[float, float, float] = (0.05, 0.95, 0.05),
    frame: FrameConfig | None = None,
    t_comm_limit_s: float | None = None,
) -> SweepResult:
    """Trace the coverage/throughput trade by sweeping the coverage floor.

    Per level: the cached sensing design gives eta_cov*; the minimum sensing
    time follows; the cached robust communication design gives the
    worst-case capacity; the time split then yields (eta_eff, c_eff).
    Infeasible levels (constraint above the achievable coverage) are
    recorded with the infeasible flag rather than dropped.
    """
    low, high, step = eta_range
    if step <= 0.0:
        raise ValueError("step must be positive")
    if low > high:
        raise ValueError("eta_range low must not exceed high")
    frame = frame or scene.frame
    t_limit = t_comm_limit_s if t_comm_limit_s is not None else frame.t_comm_max_s

    fields = build_scene_fields(scene)
    precoder, coverage = sn.hybrid_precoding_design(scene, fields=fields)
    eta_star = coverage.eta_cov
    est = mp.build_environment_estimate(
        scene, coverage.snr_linear, fields.grid,
        seed=derive_seed(scene.master_seed, "estimate"),
    )
    u = scene.uncertainty.csi_uncertainty_level
    comm = rb.design_directional_precoder(scene, est, robust=True)
    c_wc = rb.worst_case_link_capacity(comm, scene, est, u)

    n_steps = int(round((high - low) / step)) + 1
    points = [
        sweep_point(low + k * step, eta_star, c_wc, frame, t_limit)
        for k in range(n_steps)
    ]

    front = prune_dominated([p for p in points if p.feasible])
    front = label_operating_modes(front) if front else []
    return SweepResult(
        points=tuple(points),
        front=tuple(front),
        eta_cov_star=eta_star,
        c_wc_star=c_wc,
        designs={"sensing": precoder, "comm": comm, "estimate": est},
    )


def label_operating_modes(front) -> list[ParetoPoint]:
    """Tag the extremes and the knee of a non-dominated front.

    Communication priority is the maximum-capacity point, sensing priority
    the maximum-coverage point, and balanced the knee with the largest
    perpendicular distance from the chord joining the two extremes (for a
    two-point front, the point nearer the chord midpoint).
    """
    pts = sorted(front, key=lambda p: p.eta_eff)
    if not pts:
        raise ValueError("front must be nonempty")
    comm_i = max(range(len(pts)), key=lambda i: (pts[i].c_eff_bps_hz, -pts[i].eta_eff))
    sens_i = max(range(len(pts)), key=lambda i: (pts[i].eta_eff, -pts[i].c_eff_bps_hz))

    a = np.array([pts[comm_i].eta_eff, pts[comm_i].c_eff_bps_hz])
    b = np.array([pts[sens_i].eta_eff, pts[sens_i].c_eff_bps_hz])
    if len(pts) <= 2:
        mid = 0.5 * (a + b)
        bal_i = min(
            range(len(pts)),
            key=lambda i: float(np.hypot(pts[i].eta_eff - mid[0],
                                         pts[i].c_eff_bps_hz - mid[1])),
        )
    else:
        chord = b - a
        norm = float(np.hypot(*chord))
        dists = []
        for p in pts:
            v = np.array([p.eta_eff - a[0], p.c_eff_bps_hz - a[1]])
            dists.append(abs(chord[0] * v[1] - chord[1] * v[0]) / norm
                         if norm > 0.0 else 0.0)
        bal_i = int(np.argmax(dists))

    tags: dict[int, list[str]] = {}
    tags.setdefault(comm_i, []).append("comm_priority")
    tags.setdefault(sens_i, []).append("sensing_priority")
    tags.setdefault(bal_i, []).append("balanced")
    return [replace(p, mode_label="+".join(tags.get(i, [])))
            for i, p in enumerate(pts)]
