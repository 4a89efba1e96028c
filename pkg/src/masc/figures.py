"""Batch figure runners: deterministic sweeps with CSV + manifest output.

Each figure identifier maps to one experiment sweep; outputs are RFC-4180
CSV files (LF line endings, '.' decimal separator, 17-significant-digit
floats) plus a JSON run manifest, so identical configuration and seed
produce byte-identical artifacts regardless of worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import allocation as al
from . import bounds as bd
from . import configio
from . import mapping as mp
from . import robust as rb
from . import sensing as sn
from .scenario import (ScenarioConfig, SceneFields, TOOL_VERSION,
                       build_scene_fields, derive_seed)

FIGURE_IDS = (
    "coverage_vs_rf",
    "beam_patterns",
    "est_error_vs_snr",
    "capacity_vs_uncertainty",
    "sinr_vs_uncertainty",
    "pareto_fronts",
    "operating_points",
)

DUST_SWEEP = ("light", "medium", "severe")
RF_SWEEP = (4, 8, 16, 32, 64)
U_SWEEP = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
SNR_SWEEP_DB = (0.0, 5.0, 10.0)


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    tool_version: str
    outputs: tuple[tuple[str, str, int], ...]  # (figure_id, path, row_count)

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "tool_version": self.tool_version,
                "outputs": [
                    {"figure_id": f, "path": p, "row_count": n}
                    for f, p, n in self.outputs
                ],
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


def format_field(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) or isinstance(v, np.floating):
        return format(float(v), ".17g")
    text = str(v)
    if any(c in text for c in (",", '"', "\n")):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path: str, header: list[str], rows: list[tuple]) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_field(v) for v in row) + "\n")
    return len(rows)


def sweep_parallel(points: list, worker_fn, master_seed: int,
                   workers: int = 1) -> list:
    """Run worker_fn(point, seed) over all points with per-point seeds.

    Results come back ordered by input index whatever the completion order;
    a failing point yields (None, error_string) without affecting siblings.
    Seeds derive from the master seed and the point index only, so worker
    count cannot change any output.
    """
    seeds = [derive_seed(master_seed, "sweep", i) for i in range(len(points))]
    tasks = [(worker_fn, (i, p, s)) for i, (p, s) in enumerate(zip(points, seeds))]
    if workers <= 1:
        indexed = [_run_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            indexed = list(pool.map(_run_point, tasks))
    indexed.sort(key=lambda kv: kv[0])
    return [res for _, res in indexed]


def _run_point(packed):
    worker_fn, (idx, point, seed) = packed
    try:
        return idx, (worker_fn(point, seed), None)
    except Exception as exc:  # noqa: BLE001
        return idx, (None, f"{type(exc).__name__}: {exc}")


# -- per-figure workers (module level so they pickle for process pools) ----


def _coverage_point(point, seed):
    scene = configio.scenario_from_mapping(point["config"])
    fields = build_scene_fields(scene)
    if point["method"] == "hybrid":
        pre, cov = sn.hybrid_precoding_design(scene, fields=fields)
        converged = pre.converged
    else:
        _, cov = sn.fully_digital_baseline(scene, fields=fields)
        converged = True
    return {"eta_cov": cov.eta_cov, "converged": converged}


def _beam_pattern_rows(scene: ScenarioConfig, dust_name: str):
    fields = build_scene_fields(scene)
    pre, _ = sn.hybrid_precoding_design(scene, fields=fields)
    w_dig, _ = sn.fully_digital_baseline(scene, fields=fields)
    rows = []
    for method, w in (("hybrid", pre), ("digital", w_dig)):
        gain = sn.beamforming_gain(w, fields.steering) / scene.p1_w
        gain_db = 10.0 * np.log10(np.maximum(gain, 1e-30))
        for i in range(fields.theta.size):
            rows.append((dust_name, method, fields.theta[i], fields.phi[i],
                         float(gain_db[i])))
    return rows


def _est_error_point(point, seed):
    scene = configio.scenario_from_mapping(point["config"])
    snr0 = 10.0 ** (point["snr_db"] / 10.0)
    theta0 = scene.ground.position[0]
    d0 = scene.ground.position[2]
    ell = min(d0 / math.cos(theta0), scene.dust.d_max_m)
    alpha_np = scene.dust_alpha_db_per_km * math.log(10.0) / 10.0 * 1e-3
    # dust eats into the echo budget before estimation
    snr_eff = snr0 * math.exp(-4.0 * alpha_np * ell)
    spec = bd.FimSpec(snr_linear=snr_eff, n_obs=256, path_len_ell=ell,
                      obs_window_t_s=1e-3)
    times = np.linspace(0.0, spec.obs_window_t_s, spec.n_obs)
    t_bar_sq = float(np.mean(times ** 2))
    var_a, var_f = bd.mc_estimator_variance(alpha_np, 100.0, spec,
                                            n_trials=400, seed=seed)
    crlb_a = bd.crlb_alpha(spec)
    crlb_f = bd.crlb_doppler(replace(spec, t_bar_sq=t_bar_sq))
    rel_err = math.sqrt(var_a) / alpha_np if alpha_np > 0.0 else math.inf
    return {
        "var_alpha": var_a, "crlb_alpha": crlb_a,
        "var_fd": var_f, "crlb_fd": crlb_f,
        "rel_err_alpha": rel_err, "rmse_fd_hz": math.sqrt(var_f),
    }


def _comm_point(point, seed):
    scene = configio.scenario_from_mapping(point["config"])
    u = point["u_level"]
    scene = replace(scene, uncertainty=replace(scene.uncertainty,
                                               csi_uncertainty_level=u))
    fields = build_scene_fields(scene)
    pre, cov = sn.hybrid_precoding_design(scene, fields=fields)
    est = mp.build_environment_estimate(
        scene, cov.snr_linear, fields.grid,
        seed=derive_seed(scene.master_seed, "estimate"),
    )
    robust_arm = point["method"] == "robust"
    precoder = rb.design_directional_precoder(scene, est, robust=robust_arm)
    tracking = "subspace" if robust_arm else "full"
    sinr_db, cap, p_out = rb.evaluate_sinr_outage(
        precoder, scene, u, point["n_mc"], seed, est=est, csi_tracking=tracking
    )
    c_wc = rb.worst_case_link_capacity(precoder, scene, est, u)
    return {"mean_sinr_db": sinr_db, "capacity_bps_hz": cap,
            "worst_case_capacity_bps_hz": c_wc, "p_out": p_out}


def _pareto_point(point, seed):
    scene = configio.scenario_from_mapping(point["config"])
    scene = replace(scene, uncertainty=replace(
        scene.uncertainty, csi_uncertainty_level=point["u_level"]))
    res = al.epsilon_constraint_sweep(scene)
    labelled = {
        (p.eta_min_constraint): p.mode_label for p in res.front
    }
    rows = []
    for p in res.points:
        rows.append({
            "eta_min": p.eta_min_constraint,
            "eta_eff": p.eta_eff,
            "c_eff_bps_hz": p.c_eff_bps_hz,
            "t_sens_s": p.t_sens_s,
            "t_comm_s": p.t_comm_s,
            "feasible": p.feasible,
            "mode_label": labelled.get(p.eta_min_constraint, ""),
        })
    return rows


# -- figure drivers ---------------------------------------------------------


def run_figure(fig_id: str, scene: ScenarioConfig, out_dir: str,
               workers: int = 1, n_mc: int = 10000) -> RunManifest:
    """Execute one figure sweep and write its CSV plus a JSON manifest.

    Raises KeyError for unknown figure identifiers; infeasible or failing
    sweep points appear as flagged rows, not crashes.
    """
    if fig_id not in FIGURE_IDS:
        raise KeyError(f"unknown figure id {fig_id!r}")
    os.makedirs(out_dir, exist_ok=True)
    base_cfg = configio.parse_text(configio.dump_config(scene))
    runner = {
        "coverage_vs_rf": _run_coverage_vs_rf,
        "beam_patterns": _run_beam_patterns,
        "est_error_vs_snr": _run_est_error,
        "capacity_vs_uncertainty": _run_capacity,
        "sinr_vs_uncertainty": _run_sinr,
        "pareto_fronts": _run_pareto,
        "operating_points": _run_operating_points,
    }[fig_id]
    path, n_rows = runner(base_cfg, scene, out_dir, workers, n_mc)
    manifest = RunManifest(
        config_hash=scene.config_hash(),
        tool_version=TOOL_VERSION,
        outputs=((fig_id, os.path.basename(path), n_rows),),
    )
    with open(os.path.join(out_dir, f"{fig_id}_manifest.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_json())
    return manifest


def _with_dust(cfg: dict, preset: str) -> dict:
    out = {k: v for k, v in cfg.items() if not k.startswith("dust.")}
    out["dust.preset"] = preset
    return out


def _run_coverage_vs_rf(cfg, scene, out_dir, workers, n_mc):
    points = []
    for dust in DUST_SWEEP:
        for n_rf in RF_SWEEP:
            for method in ("hybrid", "digital"):
                c = _with_dust(cfg, dust)
                c["array.n_rf"] = n_rf
                points.append({"config": c, "dust": dust, "n_rf": n_rf,
                               "method": method})
    results = sweep_parallel(points, _coverage_point, scene.master_seed, workers)
    rows = []
    for point, (res, err) in zip(points, results):
        rows.append((
            point["dust"], point["n_rf"], point["method"],
            res["eta_cov"] if res else math.nan,
            res["converged"] if res else False,
            err or "",
        ))
    path = os.path.join(out_dir, "coverage_vs_rf.csv")
    n = write_csv(path, ["dust", "n_rf", "method", "eta_cov", "converged", "error"], rows)
    return path, n


def _run_beam_patterns(cfg, scene, out_dir, workers, n_mc):
    rows = []
    for dust in DUST_SWEEP:
        sc = configio.scenario_from_mapping(_with_dust(cfg, dust))
        rows.extend(_beam_pattern_rows(sc, dust))
    path = os.path.join(out_dir, "beam_patterns.csv")
    n = write_csv(path, ["dust", "method", "theta_rad", "phi_rad", "gain_db"], rows)
    return path, n


def _run_est_error(cfg, scene, out_dir, workers, n_mc):
    points = [
        {"config": _with_dust(cfg, dust), "dust": dust, "snr_db": snr_db}
        for dust in DUST_SWEEP for snr_db in SNR_SWEEP_DB
    ]
    results = sweep_parallel(points, _est_error_point, scene.master_seed, workers)
    rows = []
    for point, (res, err) in zip(points, results):
        rows.append((
            point["snr_db"], point["dust"],
            res["var_alpha"] if res else math.nan,
            res["crlb_alpha"] if res else math.nan,
            res["var_fd"] if res else math.nan,
            res["crlb_fd"] if res else math.nan,
            res["rel_err_alpha"] if res else math.nan,
            res["rmse_fd_hz"] if res else math.nan,
            err or "",
        ))
    path = os.path.join(out_dir, "est_error_vs_snr.csv")
    n = write_csv(path, ["snr_db", "dust_preset", "var_alpha", "crlb_alpha",
                         "var_fd", "crlb_fd", "rel_err_alpha", "rmse_fd_hz",
                         "error"], rows)
    return path, n


def _comm_sweep(cfg, scene, workers, n_mc):
    points = [
        {"config": _with_dust(cfg, dust), "dust": dust, "u_level": u,
         "method": method, "n_mc": n_mc}
        for dust in DUST_SWEEP for u in U_SWEEP
        for method in ("robust", "nonrobust")
    ]
    results = sweep_parallel(points, _comm_point, scene.master_seed, workers)
    return points, results


def _run_capacity(cfg, scene, out_dir, workers, n_mc):
    points, results = _comm_sweep(cfg, scene, workers, n_mc)
    rows = []
    for point, (res, err) in zip(points, results):
        rows.append((
            point["dust"], point["u_level"], point["method"],
            res["worst_case_capacity_bps_hz"] if res else math.nan,
            res["capacity_bps_hz"] if res else math.nan,
            err or "",
        ))
    path = os.path.join(out_dir, "capacity_vs_uncertainty.csv")
    n = write_csv(path, ["dust", "csi_uncertainty", "method",
                         "worst_case_capacity_bps_per_hz",
                         "ergodic_capacity_bps_per_hz", "error"], rows)
    return path, n


def _run_sinr(cfg, scene, out_dir, workers, n_mc):
    points, results = _comm_sweep(cfg, scene, workers, n_mc)
    rows = []
    for point, (res, err) in zip(points, results):
        rows.append((
            point["dust"], point["u_level"], point["method"],
            res["mean_sinr_db"] if res else math.nan,
            res["p_out"] if res else math.nan,
            err or "",
        ))
    path = os.path.join(out_dir, "sinr_vs_uncertainty.csv")
    n = write_csv(path, ["dust", "csi_uncertainty", "method", "sinr_db",
                         "p_out", "error"], rows)
    return path, n


def _run_pareto(cfg, scene, out_dir, workers, n_mc):
    points = [
        {"config": _with_dust(cfg, dust), "dust": dust, "u_level": u}
        for dust in DUST_SWEEP for u in (0.1, 0.3, 0.5)
    ]
    results = sweep_parallel(points, _pareto_point, scene.master_seed, workers)
    rows = []
    for point, (res, err) in zip(points, results):
        if res is None:
            rows.append((point["dust"], point["u_level"], math.nan, math.nan,
                         math.nan, math.nan, math.nan, False, "", err or ""))
            continue
        for r in res:
            rows.append((point["dust"], point["u_level"], r["eta_min"],
                         r["eta_eff"], r["c_eff_bps_hz"], r["t_sens_s"],
                         r["t_comm_s"], r["feasible"], r["mode_label"], ""))
    path = os.path.join(out_dir, "pareto_fronts.csv")
    n = write_csv(path, ["dust", "csi_uncertainty", "eta_min", "eta_eff",
                         "c_eff_bps_hz", "t_sens_s", "t_comm_s", "feasible",
                         "mode_label", "error"], rows)
    return path, n


def _run_operating_points(cfg, scene, out_dir, workers, n_mc):
    sc = configio.scenario_from_mapping(_with_dust(cfg, "medium"))
    sc = replace(sc, uncertainty=replace(sc.uncertainty, csi_uncertainty_level=0.3))
    res = al.epsilon_constraint_sweep(sc)
    rows = []
    for p in res.front:
        if p.mode_label:
            rows.append((p.mode_label, p.eta_min_constraint, p.eta_eff,
                         p.c_eff_bps_hz, p.t_sens_s, p.t_comm_s))
    path = os.path.join(out_dir, "operating_points.csv")
    n = write_csv(path, ["mode", "eta_min", "eta_eff", "c_eff_bps_hz",
                         "t_sens_s", "t_comm_s"], rows)
    return path, n
