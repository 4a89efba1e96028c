"""Sensing-to-communication parameter mapping with uncertainty intervals.

Two-way sensed quantities (dust attenuation, Doppler, delays, target
position) are converted to their one-way communication-phase counterparts.
Estimation noise, when enabled, perturbs the sensed dust coefficient and
Doppler with zero-mean Gaussians at the closed-form bound standard
deviations, tying the mapped uncertainty to the estimation floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bounds as bd
from . import channel as ch
from .orbit import VisibleRegion, los_unit_vector
from .scenario import ScenarioConfig, derive_seed

SPEED_OF_LIGHT_M_S = ch.SPEED_OF_LIGHT_M_S


@dataclass(frozen=True)
class EnvironmentEstimate:
    """Mapped environment parameters with per-direction uncertainty.

    ``alpha_hat`` etc. are per-grid-cell arrays in the grid's flattened
    (theta-major) order; scalars describe the tracked ground node.
    """

    grid: VisibleRegion
    alpha_hat: np.ndarray            # (n_cells,) dB/km
    alpha_interval: np.ndarray       # (n_cells, 2) [min, max]
    boundary_mask: np.ndarray        # (n_cells,) bool
    position_hat_m: np.ndarray       # (3,) global frame
    node_direction: tuple[float, float]
    node_alpha_hat: float
    node_alpha_interval: tuple[float, float]
    doppler_comm_hz: float
    tau_los_s: float
    tau_nlos_s: tuple[float, ...]
    phase_offsets_rad: tuple[float, ...]
    snr_sens_node: float

    def as_record(self) -> dict:
        """Flat serialisable summary (node-level fields)."""
        return {
            "node_theta_rad": self.node_direction[0],
            "node_phi_rad": self.node_direction[1],
            "node_alpha_hat_db_per_km": self.node_alpha_hat,
            "node_alpha_min_db_per_km": self.node_alpha_interval[0],
            "node_alpha_max_db_per_km": self.node_alpha_interval[1],
            "position_x_m": float(self.position_hat_m[0]),
            "position_y_m": float(self.position_hat_m[1]),
            "position_z_m": float(self.position_hat_m[2]),
            "doppler_comm_hz": self.doppler_comm_hz,
            "tau_los_s": self.tau_los_s,
            "n_nlos_paths": len(self.tau_nlos_s),
            "snr_sens_node": self.snr_sens_node,
        }


def delta_alpha(snr_sens: float, kappa_scale: float) -> float:
    """Relative dust-uncertainty half-width kappa / sqrt(SNR_sens).

    Returns the infinite-uncertainty sentinel for non-positive SNR, marking
    the direction unusable.
    """
    if kappa_scale <= 0.0:
        raise ValueError("kappa_scale must be positive")
    if snr_sens <= 0.0:
        return math.inf
    return kappa_scale / math.sqrt(snr_sens)


def estimate_alpha_from_echo(p_r: float, p_t: float, g_t: float, g_r: float,
                             sigma_rcs: float, lambda_m: float,
                             r_t: float, r_r: float, ell: float) -> float:
    """Radar-equation inversion for the dust coefficient (natural units / m).

    alpha_hat = -(1/2l) * ln( P_r (4pi)^3 R_t^2 R_r^2 / (P_t G_t G_r rcs lambda^2) );
    the round trip through the forward radar equation recovers alpha exactly.
    """
    for name, v in (("p_t", p_t), ("g_t", g_t), ("g_r", g_r),
                    ("sigma_rcs", sigma_rcs), ("lambda_m", lambda_m)):
        if v <= 0.0:
            raise ValueError(f"{name} must be positive")
    if ell <= 0.0:
        raise ValueError("ell must be positive")
    arg = (p_r * (4.0 * math.pi) ** 3 * r_t ** 2 * r_r ** 2
           / (p_t * g_t * g_r * sigma_rcs * lambda_m ** 2))
    if arg <= 0.0:
        raise ValueError("non-positive radar-equation argument: estimation failed")
    return -math.log(arg) / (2.0 * ell)


def radar_echo_power(p_t: float, g_t: float, g_r: float, sigma_rcs: float,
                     lambda_m: float, r_t: float, r_r: float,
                     alpha_np_per_m: float, ell: float) -> float:
    """Forward radar equation with Beer's-law dust, the inverse of the above."""
    return (p_t * g_t * g_r * sigma_rcs * lambda_m ** 2
            / ((4.0 * math.pi) ** 3 * r_t ** 2 * r_r ** 2)
            * math.exp(-2.0 * alpha_np_per_m * ell))


def triangulate_position(tau_main_s: float, theta_hat: float, phi_hat: float,
                         sat_position_m: np.ndarray | None = None,
                         sat_rotation: np.ndarray | None = None) -> np.ndarray:
    """Ground-node position from the round-trip delay and arrival angles.

    d = c * tau / 2 along the unit vector (sin t cos p, sin t sin p, cos t),
    then rotated/translated into the global frame by the satellite pose when
    given (otherwise the satellite-frame coordinates are returned).
    """
    if tau_main_s <= 0.0:
        raise ValueError("tau_main_s must be positive")
    d = SPEED_OF_LIGHT_M_S * tau_main_s / 2.0
    local = d * los_unit_vector(theta_hat, phi_hat)
    if sat_rotation is not None:
        local = sat_rotation @ local
    if sat_position_m is not None:
        local = np.asarray(sat_position_m, float) + local
    return local


def map_doppler_sens_to_comm(f_sens_hz: float, v_rover_dot_u_mps: float,
                             lambda_m: float, printed_variant: bool = False,
                             v_sat_dot_u_mps: float = 0.0) -> float:
    """One-way Doppler from the two-way sensed shift.

    Consistent form: f_comm = f_sens/2 - 2*(v_rover . u)/lambda, which
    reproduces the direct one-way formula when f_sens came from the two-way
    one. ``printed_variant`` selects the alternative textbook expression
    f_sens/2 - (v_sat . u)/lambda + (v_rover . u)/lambda, kept only for
    comparison; it is not self-consistent with the two-way definition.
    """
    if printed_variant:
        return (f_sens_hz / 2.0 - v_sat_dot_u_mps / lambda_m
                + v_rover_dot_u_mps / lambda_m)
    return f_sens_hz / 2.0 - 2.0 * v_rover_dot_u_mps / lambda_m


def map_delays(tau_main_s: float, tau_terrain_s) -> tuple[float, tuple[float, ...]]:
    """Halve every two-way delay: tau_LOS = tau_main/2, tau_NLOS_i = tau_i/2."""
    taus = tuple(float(t) for t in tau_terrain_s)
    if tau_main_s <= 0.0 or any(t <= 0.0 for t in taus):
        raise ValueError("delays must be positive")
    return tau_main_s / 2.0, tuple(t / 2.0 for t in taus)


def wrap_phase(x: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - x) % (2.0 * math.pi)


def phase_offsets(f_c_hz: float, tau_los_s: float, tau_nlos_s) -> list[float]:
    """Per-path phase differences 2*pi*f_c*(tau_LOS - tau_NLOS_i), wrapped."""
    out = []
    for tau in tau_nlos_s:
        raw = 2.0 * math.pi * f_c_hz * (tau_los_s - tau)
        out.append(wrap_phase(raw))
    return out


def detect_boundaries(alpha_field: np.ndarray, grid: VisibleRegion) -> np.ndarray:
    """Dust-storm boundary cells from the spatial gradient of alpha.

    Central differences with physical scaling (d/dtheta, (1/sin theta) d/dphi
    per unit arc) and azimuth wraparound; a cell is a boundary when the
    gradient magnitude exceeds mean + 2 std over the grid. A constant field
    (zero spread) has no boundaries.
    """
    n_theta, n_phi = grid.shape
    if n_theta < 3 or n_phi < 3:
        raise ValueError("boundary detection needs at least a 3x3 grid")
    f = np.asarray(alpha_field, dtype=float).reshape(n_theta, n_phi)
    d_theta = grid.theta_rad[1] - grid.theta_rad[0]
    d_phi = grid.phi_rad[1] - grid.phi_rad[0]

    g_theta = np.empty_like(f)
    g_theta[1:-1] = (f[2:] - f[:-2]) / (2.0 * d_theta)
    g_theta[0] = (f[1] - f[0]) / d_theta
    g_theta[-1] = (f[-1] - f[-2]) / d_theta

    g_phi = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * d_phi)
    g_phi /= np.sin(grid.theta_rad)[:, None]

    mag = np.hypot(g_theta, g_phi)
    mu = float(np.mean(mag))
    sigma = float(np.std(mag))
    if sigma == 0.0:
        return np.zeros(n_theta * n_phi, dtype=bool)
    return (mag > mu + 2.0 * sigma).ravel()


def build_environment_estimate(
    scene: ScenarioConfig,
    snr_field: np.ndarray,
    grid: VisibleRegion,
    seed: int | None = None,
    with_noise: bool = True,
) -> EnvironmentEstimate:
    """Assemble the mapped environment description from a sensing pass.

    ``snr_field`` is the per-cell sensing SNR achieved by the deployed
    precoder. Dust and Doppler estimates carry Gaussian perturbations at
    their closed-form bound standard deviations when ``with_noise``; the
    uncertainty interval uses the wider of the SNR-driven relative width and
    the scenario CSI uncertainty level.
    """
    seed = derive_seed(scene.master_seed, "estimate") if seed is None else seed
    rng = np.random.default_rng(seed)
    theta, phi, _ = grid.cells()
    alpha_true = scene.dust_alpha_db_per_km
    u_level = scene.uncertainty.csi_uncertainty_level
    kappa = scene.uncertainty.kappa_scale

    snr = np.asarray(snr_field, dtype=float)
    usable = snr > 0.0
    n_obs = max(int(scene.bandwidth_hz * 1e-2), 16)  # 10 ms estimation dwell
    ell_cells = np.minimum(
        np.sqrt(
            scene.orbit.mars_radius_m ** 2 + scene.orbit.orbit_radius_m ** 2
            - 2.0 * scene.orbit.mars_radius_m * scene.orbit.orbit_radius_m * np.cos(theta)
        ) / np.cos(theta),
        scene.dust.d_max_m,
    )
    alpha_hat = np.full(theta.size, alpha_true)
    if with_noise:
        # bound-floored Gaussian perturbation, expressed in dB/km units
        sd = np.zeros(theta.size)
        sd[usable] = np.sqrt(
            np.array([
                bd.crlb_alpha(bd.FimSpec(snr_linear=s, n_obs=n_obs, path_len_ell=l))
                for s, l in zip(snr[usable], ell_cells[usable])
            ])
        ) / (math.log(10.0) / 10.0 * 1e-3)  # nepers/m -> dB/km
        alpha_hat = alpha_hat + sd * rng.standard_normal(theta.size)
        alpha_hat = np.maximum(alpha_hat, 0.0)

    rel = np.array([delta_alpha(s, kappa) for s in snr])
    half_width = np.maximum(rel, u_level) * np.maximum(alpha_hat, 0.0)
    interval = np.column_stack([
        np.maximum(alpha_hat - half_width, 0.0), alpha_hat + half_width,
    ])
    interval[~usable] = [0.0, math.inf]
    boundary = detect_boundaries(alpha_hat, grid)

    # node-level quantities from the deterministic sensing channel
    sensed = ch.sensing_channel(scene, scene.t_epoch_s)
    theta0, phi0, _ = scene.ground.position
    cell = _nearest_cell(grid, theta0, phi0)
    snr_node = float(snr[cell])
    tau_los, tau_nlos = map_delays(
        sensed.main_delay_s, [p[1] for p in sensed.nlos]
    )
    state = scene.orbit_state()
    rot = scene.nadir_rotation()
    u0 = rot @ los_unit_vector(theta0, phi0)
    v_rover_dot_u = float(np.asarray(scene.ground.velocity_mps) @ u0)

    f_sens = sensed.main_doppler_hz
    if with_noise and snr_node > 0.0:
        t_bar_sq = (1e-3) ** 2 / 3.0  # 1 ms dwell
        var_fd = bd.crlb_doppler(
            bd.FimSpec(snr_linear=snr_node, n_obs=n_obs, path_len_ell=1.0,
                       t_bar_sq=t_bar_sq)
        )
        f_sens = f_sens + math.sqrt(var_fd) * float(rng.standard_normal())
    f_comm = map_doppler_sens_to_comm(f_sens, v_rover_dot_u, scene.wavelength_m)

    node_alpha = float(alpha_hat[cell])
    node_interval = (float(interval[cell, 0]), float(interval[cell, 1]))
    position = triangulate_position(
        sensed.main_delay_s, theta0, phi0, state.position_m, rot
    )
    offsets = phase_offsets(scene.carrier_hz, tau_los, tau_nlos)

    return EnvironmentEstimate(
        grid=grid,
        alpha_hat=alpha_hat,
        alpha_interval=interval,
        boundary_mask=boundary,
        position_hat_m=position,
        node_direction=(theta0, phi0),
        node_alpha_hat=node_alpha,
        node_alpha_interval=node_interval,
        doppler_comm_hz=f_comm,
        tau_los_s=tau_los,
        tau_nlos_s=tau_nlos,
        phase_offsets_rad=tuple(offsets),
        snr_sens_node=snr_node,
    )


def _nearest_cell(grid: VisibleRegion, theta: float, phi: float) -> int:
    theta_c, phi_c, _ = grid.cells()
    d_phi = np.angle(np.exp(1j * (phi_c - phi)))
    return int(np.argmin((theta_c - theta) ** 2 + (np.sin(theta_c) * d_phi) ** 2))
