import math
from dataclasses import replace

import numpy as np
import pytest

from masc import channel as ch
from masc import scenario as sc
from masc import sensing as sn


@pytest.fixture(scope="module")
def scene():
    return sc.scenario_preset("dust_medium", n_theta=24, n_phi=24)


@pytest.fixture(scope="module")
def fields(scene):
    return sc.build_scene_fields(scene)


def _matched_precoder(scene, direction):
    a = ch.steering_vector(scene.array, *direction, scene.wavelength_m)
    n_rf = scene.array.n_rf
    analog = sn.project_constant_modulus(np.tile(a[:, None], (1, n_rf)))
    digital = np.zeros((n_rf, 1), dtype=complex)
    digital[0, 0] = 1.0
    w = analog @ digital
    digital *= math.sqrt(scene.p1_w) / np.linalg.norm(w)
    return sn.HybridPrecoder(analog, digital, scene.p1_w)


def test_sensing_snr_null_direction(scene):
    # broadside all-ones beam has an exact null at sin(theta) = lambda/(N d)
    pre = _matched_precoder(scene, (0.0, 0.0))
    u_null = scene.wavelength_m / (scene.array.n_h * scene.array.spacing_h_m)
    val = sn.sensing_snr((math.asin(u_null), 0.0), pre, scene)
    peak = sn.sensing_snr((0.0, 0.0), pre, scene)
    assert val < peak * 1e-20


def test_sensing_snr_linear_in_power(scene):
    pre = _matched_precoder(scene, (0.1, 0.4))
    doubled = sn.HybridPrecoder(pre.analog, math.sqrt(2.0) * pre.digital,
                                2 * scene.p1_w)
    s1 = sn.sensing_snr((0.1, 0.4), pre, scene)
    s2 = sn.sensing_snr((0.1, 0.4), doubled, scene)
    assert s2 == pytest.approx(2 * s1, rel=1e-12)


def test_sensing_snr_componentwise_oracle(scene):
    # brute-force product-of-factors recomputation
    direction = (0.21, 1.3)
    pre = _matched_precoder(scene, (0.2, 1.2))
    got = sn.sensing_snr(direction, pre, scene)

    lam = scene.wavelength_m
    from masc.orbit import slant_range

    d_slant = slant_range(scene.orbit, direction[0])
    d_echo = min(d_slant, scene.sensing_range_cap_m)
    ell = min(d_slant / math.cos(direction[0]), scene.dust.d_max_m)
    conv = math.log(10.0) / 10.0 * 1e-3
    g_dust = math.exp(-ch.dust_alpha(scene.dust, lam) * conv * ell)
    l_prop = ch.fspl_two_way(d_echo, lam) / g_dust ** 2 / scene.l_other_linear
    a = ch.steering_vector(scene.array, *direction, lam)
    g_bf = float(np.sum(np.abs(np.conj(a) @ (pre.analog @ pre.digital)) ** 2))
    n_total = ch.noise_power_w(scene.bandwidth_hz, scene.noise_temperature_k)
    expected = (g_bf * scene.sensing_ant_gain_linear * scene.ground.rcs_m2
                / (l_prop * n_total))
    assert got == pytest.approx(expected, rel=1e-12)


def test_evaluate_coverage_extremes(scene, fields):
    pre = _matched_precoder(scene, (0.1, 0.0))
    low = replace(scene, gamma_sens_linear=1e-30)
    high = replace(scene, gamma_sens_linear=1e30)
    assert sn.evaluate_coverage(pre, low, fields=sc.build_scene_fields(low)).eta_cov == 1.0
    assert sn.evaluate_coverage(pre, high, fields=sc.build_scene_fields(high)).eta_cov == 0.0


def test_coverage_half_cone_synthetic(scene, fields):
    # analytic half-cone: SNR high inside theta_c where the covered solid
    # angle is half the cone's
    theta_max = fields.grid.theta_max_rad
    cos_c = 1.0 - 0.5 * (1.0 - math.cos(theta_max))
    theta_c = math.acos(cos_c)
    snr = np.where(fields.theta <= theta_c, 1.0, 1e-9)
    cov = sn.coverage_from_snr(fields.grid, snr, 0.5)
    assert cov.eta_cov == pytest.approx(0.5, abs=2.0 / scene.n_theta)


def test_coverage_monotone_in_threshold(scene, fields):
    pre = _matched_precoder(scene, (0.1, 0.0))
    cov = sn.evaluate_coverage(pre, scene, fields=fields)
    etas = []
    for scale in (0.5, 1.0, 2.0, 8.0):
        m = sn.coverage_from_snr(fields.grid, cov.snr_linear,
                                 scene.gamma_sens_linear * scale)
        etas.append(m.eta_cov)
    assert all(a >= b for a, b in zip(etas, etas[1:]))


def test_dft_codebook_unit_modulus_and_orthogonality():
    arr = ch.ArrayConfig(n_h=4, n_v=4, n_rf=16)
    w = sn.dft_codebook_init(arr, 0.15, math.pi / 2)
    assert np.max(np.abs(np.abs(w) - 1.0)) < 1e-12
    gram = w.conj().T @ w / arr.n_elements
    assert np.allclose(gram, np.eye(16), atol=1e-12)


def test_dft_codebook_peaks_inside_cone():
    arr = ch.ArrayConfig(n_rf=9)
    theta_max = 0.4636
    w = sn.dft_codebook_init(arr, 0.15, theta_max)
    thetas = np.linspace(0.0, math.pi / 2 * 0.999, 400)
    phis = np.linspace(0.0, 2 * math.pi, 181)[:-1]
    tt, pp = np.meshgrid(thetas, phis, indexing="ij")
    steer = ch.steering_vector(arr, tt.ravel(), pp.ravel(), 0.15)
    for m in range(w.shape[1]):
        gains = np.abs(np.conj(steer) @ w[:, m]) ** 2
        peak = np.argmax(gains)
        assert tt.ravel()[peak] <= theta_max + 0.02


def test_project_constant_modulus_cases():
    x = np.array([[3 + 4j, 1.0], [0.0, -2j]])
    p = sn.project_constant_modulus(x)
    assert p[0, 0] == pytest.approx((3 + 4j) / 5)
    assert p[0, 1] == pytest.approx(1.0)
    assert p[1, 0] == pytest.approx(1.0)  # zero maps to 1
    assert p[1, 1] == pytest.approx(-1j)
    again = sn.project_constant_modulus(p)
    assert np.allclose(again, p, atol=0)  # idempotent, fixed point


def test_project_constant_modulus_randomized_optimality():
    # AC11: 1e4 random phases never beat the projection, entrywise
    rng = np.random.default_rng(11)
    targets = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    best = sn.project_constant_modulus(targets)
    phases = np.exp(1j * rng.uniform(0, 2 * math.pi, 10000))
    for t, b in zip(targets, best):
        dists = np.abs(phases - t)
        assert abs(b - t) <= dists.min() + 1e-12


def test_optimize_digital_single_target_matched_filter(scene, fields):
    analog = sn.dft_codebook_init(scene.array, scene.wavelength_m,
                                  scene.orbit.theta_max_rad)
    target = np.array([[0.15, 0.8]])
    w_bb = sn.optimize_digital(analog, scene, fields=fields, targets=target)
    assert w_bb.shape[1] == 1
    a = ch.steering_vector(scene.array, 0.15, 0.8, scene.wavelength_m)
    # closed-form least-squares oracle through the analog subspace
    gram = analog.conj().T @ analog
    x_ls = np.linalg.solve(gram, analog.conj().T @ a)
    eff = analog @ w_bb[:, 0]
    eff_ls = analog @ x_ls
    cos = abs(np.vdot(eff_ls, eff)) / (np.linalg.norm(eff_ls) * np.linalg.norm(eff))
    assert cos == pytest.approx(1.0, abs=1e-9)
    # beam gain meets the matched-filter bound through the analog subspace
    gain = abs(np.vdot(np.conj(a), eff)) ** 2 / np.linalg.norm(eff) ** 2
    bound = abs(np.vdot(np.conj(a), eff_ls)) ** 2 / np.linalg.norm(eff_ls) ** 2
    assert gain == pytest.approx(bound, rel=1e-9)


def test_optimize_digital_power_rescale_exact(scene, fields):
    analog = sn.dft_codebook_init(scene.array, scene.wavelength_m,
                                  scene.orbit.theta_max_rad)
    w_bb = sn.optimize_digital(analog, scene, fields=fields)
    power = float(np.linalg.norm(analog @ w_bb) ** 2)
    assert power == pytest.approx(scene.p1_w, rel=1e-12)


def test_optimize_digital_full_rank_analog_reaches_unconstrained(scene, fields):
    # square DFT analog spans everything: the beam equals exact steering
    full = replace(scene, array=replace(scene.array, n_rf=scene.array.n_elements))
    analog = sn.dft_codebook_init(full.array, full.wavelength_m,
                                  full.orbit.theta_max_rad)
    target = np.array([[0.3, 2.0]])
    w_bb = sn.optimize_digital(analog, full, fields=fields, targets=target)
    eff = analog @ w_bb[:, 0]
    a = ch.steering_vector(full.array, 0.3, 2.0, full.wavelength_m)
    cos = abs(np.vdot(a, eff)) / (np.linalg.norm(a) * np.linalg.norm(eff))
    assert cos == pytest.approx(1.0, abs=1e-9)


def test_hybrid_design_full_coverage_when_link_closes(fields):
    # link-budget oracle at the worst grid cell: gamma below the omni floor
    base = sc.scenario_preset("table1_default", n_theta=24, n_phi=24)
    base = replace(base, array=replace(base.array, n_h=4, n_v=4, n_rf=16),
                   dust=ch.DustScenario(0.0, 20e3))
    f = sc.build_scene_fields(base)
    gamma = 0.5 * float(f.snr_unit.min())
    scene = replace(base, gamma_sens_linear=gamma)
    pre, cov = sn.hybrid_precoding_design(scene, fields=sc.build_scene_fields(scene))
    assert cov.eta_cov == 1.0


def test_hybrid_design_constraint_contract(scene, fields):
    pre, cov = sn.hybrid_precoding_design(scene, fields=fields)
    assert np.max(np.abs(np.abs(pre.analog) - 1.0)) < 1e-12
    power = float(np.linalg.norm(pre.effective) ** 2)
    assert power <= scene.p1_w * (1 + 1e-9)
    assert power == pytest.approx(scene.p1_w, rel=1e-9)
    pre.validate()
    assert 0.0 <= cov.eta_cov <= 1.0


def test_hybrid_design_monotone_accepted_sequence(scene, fields):
    pre, _ = sn.hybrid_precoding_design(scene, fields=fields)
    etas = [d[1] for d in pre.diagnostics]
    assert all(b >= a for a, b in zip(etas, etas[1:]))


def test_hybrid_design_rejects_bad_delta(scene):
    with pytest.raises(ValueError):
        sn.hybrid_precoding_design(scene, delta=0.0)


def test_coverage_monotone_in_dust_density(scene, fields):
    pre, _ = sn.hybrid_precoding_design(scene, fields=fields)
    etas = []
    for scale in (0.2, 1.0, 5.0):
        dusty = replace(scene, dust=replace(
            scene.dust,
            particle_density_per_m3=scale * scene.dust.particle_density_per_m3))
        cov = sn.evaluate_coverage(pre, dusty, fields=sc.build_scene_fields(dusty))
        etas.append(cov.eta_cov)
    assert all(a >= b for a, b in zip(etas, etas[1:]))


def test_fully_digital_baseline_contract(scene, fields):
    w, cov = sn.fully_digital_baseline(scene, fields=fields)
    assert float(np.linalg.norm(w) ** 2) == pytest.approx(scene.p1_w, rel=1e-9)
    assert 0.0 <= cov.eta_cov <= 1.0
    # isotropic probing: unit beamforming gain everywhere
    gain = sn.beamforming_gain(w, fields.steering) / scene.p1_w
    assert np.allclose(gain, 1.0, atol=1e-9)


def test_beam_pattern_peaks_both_arms(scene, fields):
    pre, _ = sn.hybrid_precoding_design(scene, fields=fields)
    w_dig, _ = sn.fully_digital_baseline(scene, fields=fields)
    peak_h = float(np.max(sn.beamforming_gain(pre, fields.steering)))
    peak_d = float(np.max(sn.beamforming_gain(w_dig, fields.steering)))
    assert peak_h > peak_d  # concentration vs uniform illumination
