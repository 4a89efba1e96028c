"""Shared fixtures: desk-scale scenes with cached sensing designs."""

from dataclasses import replace

import pytest

from masc import scenario as sc
from masc import sensing as sn

ACCEPTANCE_RESULTS = []


def record_acceptance(criterion: str, passed: bool, detail: str):
    ACCEPTANCE_RESULTS.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{criterion}] {status}: {detail}")


@pytest.fixture(scope="session")
def small_scene():
    """24x24 grid baseline scene for fast structural tests."""
    return sc.scenario_preset("table1_default", n_theta=24, n_phi=24)


@pytest.fixture(scope="session")
def desk_cache():
    """Lazy cache of desk-scale (64x64) hybrid designs keyed by (preset, n_rf)."""
    cache = {}

    def get(preset: str, n_rf: int = 16):
        key = (preset, n_rf)
        if key not in cache:
            scene = sc.scenario_preset(f"dust_{preset}")
            scene = replace(scene, array=replace(scene.array, n_rf=n_rf))
            fields = sc.build_scene_fields(scene)
            precoder, coverage = sn.hybrid_precoding_design(scene, fields=fields)
            cache[key] = (scene, fields, precoder, coverage)
        return cache[key]

    return get
