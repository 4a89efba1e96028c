"""Command-line batch front end.

    masc run --config scenario.cfg --figure pareto_fronts --out results/
    masc validate --config scenario.cfg
    masc presets

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 partial
(flagged rows present in the output).
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace

from . import channel as ch
from . import configio, figures
from .scenario import ScenarioConfig, TOOL_VERSION

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masc",
        description="Mars adaptive sensing and communication batch simulator",
    )
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one figure sweep")
    run.add_argument("--config", required=True, help="scenario file path")
    run.add_argument("--figure", required=True, choices=figures.FIGURE_IDS)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None,
                     help="override the scenario master seed")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--mc-trials", type=int, default=10000,
                     help="Monte-Carlo trials for link evaluations")

    val = sub.add_parser("validate", help="parse and validate a scenario file")
    val.add_argument("--config", required=True)

    sub.add_parser("presets", help="print the built-in scenario presets")
    return parser


def _load(path: str) -> ScenarioConfig:
    return configio.load_config(path)


def cmd_run(args) -> int:
    try:
        scene = _load(args.config)
    except (configio.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        scene = replace(scene, master_seed=args.seed)
    try:
        manifest = figures.run_figure(args.figure, scene, args.out,
                                      workers=args.workers,
                                      n_mc=args.mc_trials)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    partial = False
    import csv
    import os

    for fig_id, name, _ in manifest.outputs:
        with open(os.path.join(args.out, name), encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames and "error" in reader.fieldnames:
                partial = any(row["error"] for row in reader)
    for fig_id, name, rows in manifest.outputs:
        print(f"{fig_id}: {rows} rows -> {name}")
    print(f"config hash {manifest.config_hash}")
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_validate(args) -> int:
    try:
        scene = _load(args.config)
    except (configio.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"ok: hash {scene.config_hash()}")
    return EXIT_OK


def cmd_presets(args) -> int:
    scene = ScenarioConfig()
    print("# scenario preset: table1_default")
    print(f"carrier {scene.carrier_hz / 1e9:g} GHz, bandwidth "
          f"{scene.bandwidth_hz / 1e6:g} MHz, wavelength {scene.wavelength_m:g} m")
    print(f"orbit altitude {scene.orbit.altitude_m / 1e3:g} km, "
          f"array {scene.array.n_h}x{scene.array.n_v} UPA at lambda/2, "
          f"element gain {scene.array.element_gain_dbi:g} dBi, "
          f"n_rf {scene.array.n_rf}")
    print(f"powers P1 = P2 = {scene.p1_w:g} W, noise factor "
          f"{scene.noise_factor_db:g} dB")
    print(f"thresholds: sensing {10 * math.log10(scene.gamma_sens_linear):g} dB, "
          f"comm {scene.gamma_comm_linear:g} linear, eps_out {scene.eps_out:g}, "
          f"target rcs {scene.ground.rcs_m2:g} m^2")
    print()
    print("# dust presets (particle density 1/m^3, layer height m)")
    for name in ("light", "medium", "severe"):
        d = ch.DUST_PRESETS[name]
        print(f"{name}: density {d.particle_density_per_m3:g}, layer "
              f"{d.layer_height_m:g}, mean radius {d.mean_radius_m:g}, "
              f"permittivity {d.eps_real:g} - j{d.eps_imag:g}, "
              f"d_max {d.d_max_m:g}")
    print("CSI uncertainty levels 0.1 - 0.8 "
          "(uncertainty.csi_level)")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": cmd_run,
        "validate": cmd_validate,
        "presets": cmd_presets,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
