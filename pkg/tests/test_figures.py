import csv
import json
import os

import numpy as np
import pytest

from masc import cli, configio, figures
from masc import scenario as sc

SMALL = {"grid.n_theta": 16, "grid.n_phi": 16, "seed": 11}


def _small_scene(**extra):
    return configio.scenario_from_mapping({**SMALL, **extra})


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_sweep_parallel_determinism_and_isolation():
    def worker(point, seed):
        if point == 3:
            raise RuntimeError("poisoned")
        return {"value": point * 2, "seed": seed}

    res1 = figures.sweep_parallel(list(range(6)), worker, master_seed=5)
    assert res1[3][0] is None
    assert "poisoned" in res1[3][1]
    for i in (0, 1, 2, 4, 5):
        assert res1[i][0]["value"] == i * 2
        assert res1[i][1] is None
    seeds = [r[0]["seed"] for i, r in enumerate(res1) if r[0]]
    assert len(set(seeds)) == len(seeds)  # distinct per-point seeds
    res2 = figures.sweep_parallel(list(range(6)), worker, master_seed=5)
    assert res1 == res2


def test_est_error_figure_schema_and_determinism(tmp_path):
    scene = _small_scene()
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    m1 = figures.run_figure("est_error_vs_snr", scene, str(out1), workers=1)
    m2 = figures.run_figure("est_error_vs_snr", scene, str(out2), workers=2)
    f1 = out1 / "est_error_vs_snr.csv"
    f2 = out2 / "est_error_vs_snr.csv"
    assert f1.read_bytes() == f2.read_bytes()  # worker-count independent
    rows = _read(f1)
    assert len(rows) == 9
    assert set(rows[0]) == {"snr_db", "dust_preset", "var_alpha", "crlb_alpha",
                            "var_fd", "crlb_fd", "rel_err_alpha", "rmse_fd_hz",
                            "error"}
    assert all(r["error"] == "" for r in rows)
    assert m1.config_hash == m2.config_hash
    manifest = json.loads((out1 / "est_error_vs_snr_manifest.json").read_text())
    assert manifest["outputs"][0]["row_count"] == 9


def test_coverage_figure_schema(tmp_path):
    scene = _small_scene(**{"array.n_rf": 8})
    figures.run_figure("coverage_vs_rf", scene, str(tmp_path))
    rows = _read(tmp_path / "coverage_vs_rf.csv")
    assert len(rows) == 5 * 2 * 3  # n_rf sweep x methods x dust presets
    for r in rows:
        assert 0.0 <= float(r["eta_cov"]) <= 1.0
    per_dust = {r["dust"] for r in rows}
    assert per_dust == {"light", "medium", "severe"}


def test_figure_run_does_not_mutate_config(tmp_path):
    scene = _small_scene()
    before = scene.config_hash()
    figures.run_figure("est_error_vs_snr", scene, str(tmp_path))
    assert scene.config_hash() == before


def test_figure_rerun_identical_bytes(tmp_path):
    scene = _small_scene()
    a = tmp_path / "r1"
    b = tmp_path / "r2"
    figures.run_figure("beam_patterns", scene, str(a))
    figures.run_figure("beam_patterns", scene, str(b))
    assert (a / "beam_patterns.csv").read_bytes() == (b / "beam_patterns.csv").read_bytes()


def test_unknown_figure_id(tmp_path):
    with pytest.raises(KeyError):
        figures.run_figure("nope", _small_scene(), str(tmp_path))


def test_csv_quoting():
    assert figures.format_field(1.5) == "1.5"
    assert figures.format_field(True) == "true"
    assert figures.format_field('say "hi", ok') == '"say ""hi"", ok"'


def test_cli_validate_and_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("dust.preset = light\n")
    assert cli.main(["validate", "--config", str(good)]) == cli.EXIT_OK
    bad = tmp_path / "bad.cfg"
    bad.write_text("array.n_rf = 999\n")
    assert cli.main(["validate", "--config", str(bad)]) == cli.EXIT_VALIDATION
    missing = tmp_path / "missing.cfg"
    assert cli.main(["validate", "--config", str(missing)]) == cli.EXIT_VALIDATION


def test_cli_presets(capsys):
    assert cli.main(["presets"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "table1_default" in out
    assert "severe" in out


def test_cli_run_small_figure(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("grid.n_theta = 16\ngrid.n_phi = 16\n")
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(cfg), "--figure", "est_error_vs_snr",
                     "--out", str(out)])
    assert code == cli.EXIT_OK
    assert (out / "est_error_vs_snr.csv").exists()
    text = capsys.readouterr().out
    assert "config hash" in text


def test_cli_seed_override_changes_hash(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("grid.n_theta = 16\ngrid.n_phi = 16\n")
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    cli.main(["run", "--config", str(cfg), "--figure", "est_error_vs_snr",
              "--out", str(out1), "--seed", "1"])
    cli.main(["run", "--config", str(cfg), "--figure", "est_error_vs_snr",
              "--out", str(out2), "--seed", "2"])
    m1 = json.loads((out1 / "est_error_vs_snr_manifest.json").read_text())
    m2 = json.loads((out2 / "est_error_vs_snr_manifest.json").read_text())
    assert m1["config_hash"] != m2["config_hash"]
