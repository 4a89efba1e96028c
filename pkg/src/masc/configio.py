"""Flat dotted-key text configuration for scenario files.

Format: one ``key = value`` per line, ``#`` comments, blank lines ignored.
Unknown keys are hard errors with the offending line number. ``dust.preset``
expands a named storm; an empty file yields the baseline system defaults.
The canonical dump is sorted and 17-significant-digit formatted so identical
configurations serialise to identical bytes.
"""

from __future__ import annotations

import math

from . import channel as ch
from .orbit import OrbitConfig
from .scenario import FrameConfig, ScenarioConfig, UncertaintyModel


class ConfigError(ValueError):
    """Parse or validation failure, carrying file/line context."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


# dotted key -> (parser, getter): the getter pulls the current value from a
# ScenarioConfig so dumps round-trip through loads.
_SCHEMA = {
    "orbit.altitude_m": (float, lambda s: s.orbit.altitude_m),
    "orbit.mars_radius_m": (float, lambda s: s.orbit.mars_radius_m),
    "orbit.mu_mars": (float, lambda s: s.orbit.mu_mars),
    "orbit.phase0_rad": (float, lambda s: s.orbit.phase0_rad),
    "array.n_h": (int, lambda s: s.array.n_h),
    "array.n_v": (int, lambda s: s.array.n_v),
    "array.spacing_h_m": (float, lambda s: s.array.spacing_h_m),
    "array.spacing_v_m": (float, lambda s: s.array.spacing_v_m),
    "array.element_gain_dbi": (float, lambda s: s.array.element_gain_dbi),
    "array.max_gain_linear": (float, lambda s: s.array.max_gain_linear),
    "array.n_rf": (int, lambda s: s.array.n_rf),
    "dust.preset": (str, lambda s: ""),
    "dust.particle_density_per_m3": (float, lambda s: s.dust.particle_density_per_m3),
    "dust.layer_height_m": (float, lambda s: s.dust.layer_height_m),
    "dust.mean_radius_m": (float, lambda s: s.dust.mean_radius_m),
    "dust.eps_real": (float, lambda s: s.dust.eps_real),
    "dust.eps_imag": (float, lambda s: s.dust.eps_imag),
    "dust.d_max_m": (float, lambda s: s.dust.d_max_m),
    "ground.g0_linear": (float, lambda s: s.ground.g0_linear),
    "ground.boresight_rad": (float, lambda s: s.ground.boresight_rad),
    "ground.directivity_n": (float, lambda s: s.ground.directivity_n),
    "ground.rcs_m2": (float, lambda s: s.ground.rcs_m2),
    "ground.velocity_x_mps": (float, lambda s: s.ground.velocity_mps[0]),
    "ground.velocity_y_mps": (float, lambda s: s.ground.velocity_mps[1]),
    "ground.velocity_z_mps": (float, lambda s: s.ground.velocity_mps[2]),
    "ground.theta_rad": (float, lambda s: s.ground.position[0]),
    "ground.phi_rad": (float, lambda s: s.ground.position[1]),
    "ground.range_m": (float, lambda s: s.ground.position[2]),
    "frame.t_frame_s": (float, lambda s: s.frame.t_frame_s),
    "frame.t_sens_min_s": (float, lambda s: s.frame.t_sens_min_s),
    "frame.t_comm_max_s": (float, lambda s: s.frame.t_comm_max_s),
    "uncertainty.kappa_scale": (float, lambda s: s.uncertainty.kappa_scale),
    "uncertainty.csi_level": (float, lambda s: s.uncertainty.csi_uncertainty_level),
    "carrier_hz": (float, lambda s: s.carrier_hz),
    "bandwidth_hz": (float, lambda s: s.bandwidth_hz),
    "noise_factor_db": (float, lambda s: s.noise_factor_db),
    "p1_w": (float, lambda s: s.p1_w),
    "p2_w": (float, lambda s: s.p2_w),
    "gamma_sens_db": (float, lambda s: 10.0 * math.log10(s.gamma_sens_linear)),
    "gamma_comm_linear": (float, lambda s: s.gamma_comm_linear),
    "gamma_th_linear": (float, lambda s: s.gamma_th_linear),
    "eps_out": (float, lambda s: s.eps_out),
    "eta_min": (float, lambda s: s.eta_min),
    "rx_gain_linear": (float, lambda s: s.rx_gain_linear),
    "processing_gain_linear": (float, lambda s: s.processing_gain_linear),
    "l_other_linear": (float, lambda s: s.l_other_linear),
    "sensing_range_cap_m": (float, lambda s: s.sensing_range_cap_m),
    "comm_extra_loss_db": (float, lambda s: s.comm_extra_loss_db),
    "sigma_mis2": (float, lambda s: s.sigma_mis2),
    "rho_leak": (float, lambda s: s.rho_leak),
    "wind.vx_mps": (float, lambda s: s.wind_mps[0]),
    "wind.vy_mps": (float, lambda s: s.wind_mps[1]),
    "wind.vz_mps": (float, lambda s: s.wind_mps[2]),
    "n_terrain_paths": (int, lambda s: s.n_terrain_paths),
    "grid.n_theta": (int, lambda s: s.n_theta),
    "grid.n_phi": (int, lambda s: s.n_phi),
    "seed": (int, lambda s: s.master_seed),
    "t_epoch_s": (float, lambda s: s.t_epoch_s),
}


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse dotted-key lines into a typed dict; unknown keys are errors."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser = _SCHEMA[key][0]
        try:
            out[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(
                f"{source}:{lineno}: bad value for {key!r}: {value!r} ({exc})"
            ) from exc
    return out


def scenario_from_mapping(values: dict, source: str = "<config>") -> ScenarioConfig:
    """Build a validated ScenarioConfig from parsed dotted-key values."""
    base = ScenarioConfig()
    v = dict(values)

    def take(key, default):
        return v.pop(key) if key in v else default

    try:
        return _assemble(v, take, base, source)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from exc


def _assemble(v, take, base, source) -> ScenarioConfig:
    orbit = OrbitConfig(
        altitude_m=take("orbit.altitude_m", base.orbit.altitude_m),
        mars_radius_m=take("orbit.mars_radius_m", base.orbit.mars_radius_m),
        mu_mars=take("orbit.mu_mars", base.orbit.mu_mars),
        phase0_rad=take("orbit.phase0_rad", base.orbit.phase0_rad),
    )
    array = ch.ArrayConfig(
        n_h=take("array.n_h", base.array.n_h),
        n_v=take("array.n_v", base.array.n_v),
        spacing_h_m=take("array.spacing_h_m", base.array.spacing_h_m),
        spacing_v_m=take("array.spacing_v_m", base.array.spacing_v_m),
        element_gain_dbi=take("array.element_gain_dbi", base.array.element_gain_dbi),
        max_gain_linear=take("array.max_gain_linear", 0.0),
        n_rf=take("array.n_rf", base.array.n_rf),
    )
    if "dust.preset" in v:
        name = v.pop("dust.preset").lower()
        if name not in ch.DUST_PRESETS:
            raise ConfigError(f"{source}: unknown dust preset {name!r}")
        dust = ch.DUST_PRESETS[name]
    else:
        dust = base.dust
    dust = ch.DustScenario(
        particle_density_per_m3=take("dust.particle_density_per_m3",
                                     dust.particle_density_per_m3),
        layer_height_m=take("dust.layer_height_m", dust.layer_height_m),
        mean_radius_m=take("dust.mean_radius_m", dust.mean_radius_m),
        eps_real=take("dust.eps_real", dust.eps_real),
        eps_imag=take("dust.eps_imag", dust.eps_imag),
        d_max_m=take("dust.d_max_m", dust.d_max_m),
    )
    ground = ch.GroundNodeConfig(
        g0_linear=take("ground.g0_linear", base.ground.g0_linear),
        boresight_rad=take("ground.boresight_rad", base.ground.boresight_rad),
        directivity_n=take("ground.directivity_n", base.ground.directivity_n),
        rcs_m2=take("ground.rcs_m2", base.ground.rcs_m2),
        velocity_mps=(
            take("ground.velocity_x_mps", base.ground.velocity_mps[0]),
            take("ground.velocity_y_mps", base.ground.velocity_mps[1]),
            take("ground.velocity_z_mps", base.ground.velocity_mps[2]),
        ),
        position=(
            take("ground.theta_rad", base.ground.position[0]),
            take("ground.phi_rad", base.ground.position[1]),
            take("ground.range_m", base.ground.position[2]),
        ),
    )
    frame = FrameConfig(
        t_frame_s=take("frame.t_frame_s", base.frame.t_frame_s),
        t_sens_min_s=take("frame.t_sens_min_s", base.frame.t_sens_min_s),
        t_comm_max_s=take("frame.t_comm_max_s", base.frame.t_comm_max_s),
    )
    uncertainty = UncertaintyModel(
        kappa_scale=take("uncertainty.kappa_scale", base.uncertainty.kappa_scale),
        csi_uncertainty_level=take("uncertainty.csi_level",
                                   base.uncertainty.csi_uncertainty_level),
    )
    gamma_sens_db = take("gamma_sens_db", 10.0 * math.log10(base.gamma_sens_linear))
    scene = ScenarioConfig(
        orbit=orbit,
        array=array,
        dust=dust,
        ground=ground,
        frame=frame,
        uncertainty=uncertainty,
        carrier_hz=take("carrier_hz", base.carrier_hz),
        bandwidth_hz=take("bandwidth_hz", base.bandwidth_hz),
        noise_factor_db=take("noise_factor_db", base.noise_factor_db),
        p1_w=take("p1_w", base.p1_w),
        p2_w=take("p2_w", base.p2_w),
        gamma_sens_linear=10.0 ** (gamma_sens_db / 10.0),
        gamma_comm_linear=take("gamma_comm_linear", base.gamma_comm_linear),
        gamma_th_linear=take("gamma_th_linear", base.gamma_th_linear),
        eps_out=take("eps_out", base.eps_out),
        eta_min=take("eta_min", base.eta_min),
        rx_gain_linear=take("rx_gain_linear", base.rx_gain_linear),
        processing_gain_linear=take("processing_gain_linear",
                                    base.processing_gain_linear),
        l_other_linear=take("l_other_linear", base.l_other_linear),
        sensing_range_cap_m=take("sensing_range_cap_m", base.sensing_range_cap_m),
        comm_extra_loss_db=take("comm_extra_loss_db", base.comm_extra_loss_db),
        sigma_mis2=take("sigma_mis2", base.sigma_mis2),
        rho_leak=take("rho_leak", base.rho_leak),
        wind_mps=(
            take("wind.vx_mps", base.wind_mps[0]),
            take("wind.vy_mps", base.wind_mps[1]),
            take("wind.vz_mps", base.wind_mps[2]),
        ),
        n_terrain_paths=take("n_terrain_paths", base.n_terrain_paths),
        n_theta=take("grid.n_theta", base.n_theta),
        n_phi=take("grid.n_phi", base.n_phi),
        master_seed=take("seed", base.master_seed),
        t_epoch_s=take("t_epoch_s", base.t_epoch_s),
    )
    if v:
        raise ConfigError(f"{source}: unconsumed keys {sorted(v)}")
    return scene


def load_config(path: str) -> ScenarioConfig:
    """Read and validate a scenario file (empty file -> baseline defaults)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return scenario_from_mapping(parse_text(text, source=path), source=path)


def dump_config(scene: ScenarioConfig) -> str:
    """Canonical sorted key = value dump (17-significant-digit floats)."""
    lines = []
    for key in sorted(_SCHEMA):
        if key == "dust.preset":
            continue  # presets expand to explicit dust keys
        _, getter = _SCHEMA[key]
        lines.append(f"{key} = {_fmt(getter(scene))}")
    return "\n".join(lines) + "\n"
