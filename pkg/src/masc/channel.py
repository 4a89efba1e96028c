"""Propagation physics for the dusty Mars link.

Covers free-space path loss (one-way and radar round trip), Rayleigh-regime
dust attenuation, UPA and ground antenna gains, Fresnel terrain reflection,
Doppler shifts, and the composite sensing / communication channel
realizations. Everything is a pure function; the only randomness (comm-phase
Rayleigh fading and precoding misalignment) is driven by an explicit seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .orbit import OrbitConfig, VisibilityError, los_unit_vector, slant_range

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import ScenarioConfig

BOLTZMANN_J_PER_K = 1.380649e-23
SPEED_OF_LIGHT_M_S = 299_792_458.0
REFERENCE_TEMP_K = 290.0

# dB/km -> nepers/m for Beer's-law exponents
_DB_PER_KM_TO_NP_PER_M = math.log(10.0) / 10.0 * 1e-3


class ChannelPhase(enum.Enum):
    SENSING = "sensing"
    COMMUNICATION = "communication"


# Storms loft dust well above the nominal mixing layer; the effective dust
# ceiling is taken as this multiple of the layer height.
DUST_LOFTING_FACTOR = 4.0


@dataclass(frozen=True)
class DustScenario:
    """Suspended-dust population along the link.

    ``d_max_m`` is the effective maximum path through the dust shell; the
    preset value is the grazing chord sqrt((r + H)^2 - r^2) through the
    lofted dust ceiling H = DUST_LOFTING_FACTOR * layer height.
    """

    particle_density_per_m3: float
    layer_height_m: float
    mean_radius_m: float = 1.5e-6
    eps_real: float = 1.55
    eps_imag: float = 6.3
    d_max_m: float = 0.0

    def __post_init__(self):
        if self.particle_density_per_m3 < 0.0:
            raise ValueError("particle density must be >= 0")
        if self.eps_imag <= 0.0:
            raise ValueError("eps_imag must be positive")
        if self.d_max_m <= 0.0:
            ceiling = DUST_LOFTING_FACTOR * self.layer_height_m
            object.__setattr__(self, "d_max_m", grazing_chord_m(ceiling))


def grazing_chord_m(layer_height_m: float, sphere_radius_m: float = 3_389_500.0) -> float:
    """Chord length of a tangent ray through a spherical shell of given height."""
    r = sphere_radius_m
    return math.sqrt((r + layer_height_m) ** 2 - r * r)


# Table presets: Light/Medium/Severe storm populations.
DUST_PRESETS = {
    "light": DustScenario(1e8, 10e3),
    "medium": DustScenario(3e8, 20e3),
    "severe": DustScenario(5e8, 30e3),
    # Alternative permittivity binding (2.5 - j0.05) retained as explicit presets.
    "light_alt_permittivity": DustScenario(1e8, 10e3, eps_real=2.5, eps_imag=0.05),
    "medium_alt_permittivity": DustScenario(3e8, 20e3, eps_real=2.5, eps_imag=0.05),
    "severe_alt_permittivity": DustScenario(5e8, 30e3, eps_real=2.5, eps_imag=0.05),
}


@dataclass(frozen=True)
class ArrayConfig:
    """Satellite UPA: n_h x n_v elements behind n_rf RF chains.

    ``max_gain_linear`` is the array-factor peak (full coherent gain including
    the element pattern); when left at 0 it defaults to N_t * element gain.
    """

    n_h: int = 8
    n_v: int = 8
    spacing_h_m: float = 0.075
    spacing_v_m: float = 0.075
    element_gain_dbi: float = 28.0
    max_gain_linear: float = 0.0
    n_rf: int = 16

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.spacing_h_m <= 0.0 or self.spacing_v_m <= 0.0:
            raise ValueError("element spacings must be positive")
        if not (1 <= self.n_rf <= self.n_h * self.n_v):
            raise ValueError(
                f"n_rf must be in [1, {self.n_h * self.n_v}], got {self.n_rf}"
            )
        if self.max_gain_linear <= 0.0:
            object.__setattr__(
                self,
                "max_gain_linear",
                self.n_h * self.n_v * 10.0 ** (self.element_gain_dbi / 10.0),
            )

    @property
    def n_elements(self) -> int:
        return self.n_h * self.n_v

    @property
    def element_gain_linear(self) -> float:
        return 10.0 ** (self.element_gain_dbi / 10.0)


@dataclass(frozen=True)
class GroundNodeConfig:
    """Single-antenna ground node: cos^n receive pattern plus radar signature."""

    g0_linear: float = 2.0
    boresight_rad: float = 0.0
    directivity_n: float = 2.0
    rcs_m2: float = 200.0
    velocity_mps: tuple[float, float, float] = (1.0, 0.0, 0.0)
    # (theta, phi, range_m): 500 km slant range at theta = 0.084 rad
    position: tuple[float, float, float] = (0.084, 0.0, 5.0e5)

    def __post_init__(self):
        if self.g0_linear <= 0.0:
            raise ValueError("g0_linear must be positive")
        if self.rcs_m2 <= 0.0:
            raise ValueError("rcs_m2 must be positive")


@dataclass(frozen=True)
class TerrainPath:
    """One specular terrain bounce: satellite -> reflector (d1) -> node (d2)."""

    d1_m: float
    d2_m: float
    incidence_rad: float
    eps_r: float
    direction: tuple[float, float]  # (theta, phi) seen from the satellite
    effective_dust_angle_rad: float

    def __post_init__(self):
        if self.d1_m <= 0.0 or self.d2_m <= 0.0:
            raise ValueError("path segments must be positive")
        if not (0.0 <= self.incidence_rad < math.pi / 2.0):
            raise ValueError("incidence must lie in [0, pi/2)")

    @property
    def total_length_m(self) -> float:
        return self.d1_m + self.d2_m


@dataclass(frozen=True)
class ChannelRealization:
    """Composite channel coefficients for one phase at one instant.

    Sensing-phase realizations are fully deterministic; communication-phase
    ones carry per-path Rayleigh fading ``xi`` and a multiplicative
    (1 + misalign) precoding-error term drawn from the given seed.
    """

    phase: ChannelPhase
    los_coeff: complex
    nlos: tuple[tuple[complex, float, float, complex], ...]  # (coeff, delay_s, doppler_hz, xi)
    main_delay_s: float
    main_doppler_hz: float
    misalign: complex = 0.0 + 0.0j

    @property
    def total_coeff(self) -> complex:
        total = self.los_coeff + sum(c * xi for c, _, _, xi in self.nlos)
        if self.phase is ChannelPhase.COMMUNICATION:
            total *= 1.0 + self.misalign
        return total


def fspl_one_way(d_m: float, lambda_m: float) -> float:
    """One-way free-space path loss (4*pi*d / lambda)^2, linear."""
    if d_m <= 0.0 or lambda_m <= 0.0:
        raise ValueError("d and lambda must be positive")
    return (4.0 * math.pi * d_m / lambda_m) ** 2


def fspl_two_way(d_m: float, lambda_m: float) -> float:
    """Radar round-trip path loss 16*(4*pi*d / lambda)^4 = (4*pi*(2d)/lambda)^4."""
    if d_m <= 0.0 or lambda_m <= 0.0:
        raise ValueError("d and lambda must be positive")
    return 16.0 * (4.0 * math.pi * d_m / lambda_m) ** 4


def dust_alpha(dust: DustScenario, lambda_m: float) -> float:
    """Rayleigh forward-scattering dust attenuation coefficient, dB/km.

    alpha = 1.029e6 * eps'' / (((eps' + 2)^2 + eps''^2) * lambda) * N * rbar^3.
    The 1.029e6 constant carries the dB/km convention of the underlying
    scattering model; convert with nepers-per-metre before exponentiating.
    """
    if lambda_m <= 0.0:
        raise ValueError("lambda must be positive")
    denom = ((dust.eps_real + 2.0) ** 2 + dust.eps_imag ** 2) * lambda_m
    return (
        1.029e6 * dust.eps_imag / denom
        * dust.particle_density_per_m3
        * dust.mean_radius_m ** 3
    )


def dust_path_length(d_m: float, theta_rad: float, d_max_m: float) -> float:
    """Effective dust path min(d / cos(theta), d_max)."""
    return min(d_m / math.cos(theta_rad), d_max_m)


def dust_gain(alpha_db_per_km: float, theta_elev_rad: float, d_m: float,
              d_max_m: float) -> float:
    """Beer's-law dust transmission exp(-alpha * l) with clamped path length."""
    if alpha_db_per_km < 0.0:
        raise ValueError("alpha must be >= 0")
    ell = dust_path_length(d_m, theta_elev_rad, d_max_m)
    return math.exp(-alpha_db_per_km * _DB_PER_KM_TO_NP_PER_M * ell)


def steering_vector(arr: ArrayConfig, theta_rad, phi_rad, lambda_m: float) -> np.ndarray:
    """UPA steering phasor (unit-modulus entries), shape (..., n_h * n_v).

    Element (m, n) carries phase 2*pi/lambda * (m*d_h*sin(t)cos(p) +
    n*d_v*sin(t)sin(p)); rows/columns are flattened horizontal-major.
    """
    theta = np.asarray(theta_rad, dtype=float)
    phi = np.asarray(phi_rad, dtype=float)
    u = np.sin(theta) * np.cos(phi)
    v = np.sin(theta) * np.sin(phi)
    m = np.arange(arr.n_h)
    n = np.arange(arr.n_v)
    ph_h = np.exp(1j * 2.0 * math.pi * arr.spacing_h_m / lambda_m * np.multiply.outer(u, m))
    ph_v = np.exp(1j * 2.0 * math.pi * arr.spacing_v_m / lambda_m * np.multiply.outer(v, n))
    return (ph_h[..., :, None] * ph_v[..., None, :]).reshape(*theta.shape, arr.n_elements)


def _dirichlet_ratio(x: np.ndarray, n: int) -> np.ndarray:
    """sin(n*x) / (n*sin(x)) with the removable singularities evaluated by limit."""
    x = np.asarray(x, dtype=float)
    sx = np.sin(x)
    small = np.abs(sx) < 1e-9
    safe = np.where(small, 1.0, sx)
    ratio = np.sin(n * x) / (n * safe)
    # L'Hopital at sin(x) -> 0: ratio -> cos(n*x)/cos(x) (= +-1 at multiples of pi)
    limit = np.cos(n * x) / np.where(np.abs(np.cos(x)) < 1e-12, 1.0, np.cos(x))
    return np.where(small, limit, ratio)


def upa_array_factor(arr: ArrayConfig, theta_rad, phi_rad, lambda_m: float):
    """Broadside UPA power pattern b_max * |D_h(theta,phi) * D_v(theta,phi)|^2.

    Equals the brute-force phasor sum |sum_i exp(j k.r_i)|^2 / N_t^2 scaled to
    peak b_max; the peak sits at broadside where both Dirichlet ratios -> 1.
    """
    theta = np.asarray(theta_rad, dtype=float)
    phi = np.asarray(phi_rad, dtype=float)
    xh = math.pi * arr.spacing_h_m / lambda_m * np.sin(theta) * np.cos(phi)
    xv = math.pi * arr.spacing_v_m / lambda_m * np.sin(theta) * np.sin(phi)
    val = arr.max_gain_linear * np.abs(
        _dirichlet_ratio(xh, arr.n_h) * _dirichlet_ratio(xv, arr.n_v)
    ) ** 2
    return float(val) if val.ndim == 0 else val


def ground_gain(node: GroundNodeConfig, arrival_rad: float) -> float:
    """Ground antenna gain G0 * cos^n(offset), clamped to 0 behind the aperture."""
    offset = math.remainder(arrival_rad - node.boresight_rad, 2.0 * math.pi)
    if abs(offset) >= math.pi / 2.0:
        return 0.0
    return node.g0_linear * math.cos(offset) ** node.directivity_n


def noise_power_w(bandwidth_hz: float, temperature_k: float) -> float:
    """Thermal noise floor kappa * B * T, watts."""
    return BOLTZMANN_J_PER_K * bandwidth_hz * temperature_k


def noise_temperature_from_factor(noise_factor_db: float) -> float:
    """System noise temperature T0 * F for a receiver noise factor in dB."""
    return REFERENCE_TEMP_K * 10.0 ** (noise_factor_db / 10.0)


def channel_gain_vector(
    cfg: OrbitConfig,
    direction: tuple[float, float],
    dust: DustScenario,
    arr: ArrayConfig,
    node: GroundNodeConfig,
    lambda_m: float,
    bandwidth_hz: float,
    temperature_k: float,
    arrival_rad: float = 0.0,
    extra_gain_linear: float = 1.0,
) -> np.ndarray:
    """Per-element noise-referenced channel gain vector toward one direction.

    g = sqrt(FSPL^-1 * G_m / (kB * B * T)) * chi (.) b^(1/2), where chi is the
    scalar dust transmission broadcast over elements and b the per-element
    array response magnitude (the broadside pattern value); steering phases
    are attached so the output is a complex length-N_t vector.
    """
    theta, phi = direction
    d = slant_range(cfg, theta)  # raises VisibilityError outside the cone
    alpha = dust_alpha(dust, lambda_m)
    chi = dust_gain(alpha, theta, d, dust.d_max_m)
    g_m = ground_gain(node, arrival_rad)
    scalar = math.sqrt(
        (1.0 / fspl_one_way(d, lambda_m))
        * g_m * extra_gain_linear
        / noise_power_w(bandwidth_hz, temperature_k)
    )
    b = upa_array_factor(arr, theta, phi, lambda_m)
    phases = steering_vector(arr, theta, phi, lambda_m)
    return scalar * chi * math.sqrt(b) * phases


def fresnel_reflection(eps_r: float, theta_inc_rad: float) -> float:
    """Specular (parallel-polarised) Fresnel reflection coefficient, signed.

    Gamma = (eps*cos(t) - sqrt(eps - sin^2 t)) / (eps*cos(t) + sqrt(eps - sin^2 t)).
    """
    if eps_r <= 1.0:
        raise ValueError("eps_r must exceed 1")
    if not (0.0 <= theta_inc_rad < math.pi / 2.0):
        raise ValueError("incidence must lie in [0, pi/2)")
    c = math.cos(theta_inc_rad)
    root = math.sqrt(eps_r - math.sin(theta_inc_rad) ** 2)
    return (eps_r * c - root) / (eps_r * c + root)


def doppler_sensing(v_sat, v_wind, v_rover, u, lambda_m: float) -> float:
    """Round-trip Doppler (2/lambda) * (v_sat + v_wind + v_rover) . u, Hz."""
    total = np.asarray(v_sat, float) + np.asarray(v_wind, float) + np.asarray(v_rover, float)
    return 2.0 / lambda_m * float(total @ np.asarray(u, float))


def doppler_comm(v_sat, v_wind, v_rover, u, lambda_m: float) -> float:
    """One-way Doppler (1/lambda) * (v_sat + v_wind - v_rover) . u, Hz.

    The rover contributes with opposite sign to the sensing case: it is a
    receiver here, a reflector there.
    """
    total = np.asarray(v_sat, float) + np.asarray(v_wind, float) - np.asarray(v_rover, float)
    return 1.0 / lambda_m * float(total @ np.asarray(u, float))


def _node_geometry(scene: "ScenarioConfig"):
    theta0, phi0, range_m = scene.ground.position
    d = range_m if range_m > 0.0 else slant_range(scene.orbit, theta0)
    return theta0, phi0, d


def sensing_channel(scene: "ScenarioConfig", t: float) -> ChannelRealization:
    """Two-way sensing channel: main target echo plus terrain bounces.

    h_main = sqrt(rcs) / sqrt(L_bi) * exp(-alpha * 2l) * exp(j*2*pi*f_sens*t);
    each terrain path uses its own round-trip loss (4*pi*(d1+d2)/lambda)^4,
    dust path l'_i = (d1+d2)/cos(theta_eff) and Fresnel coefficient.
    Deterministic: no fading terms appear in the sensing phase.
    """
    lam = scene.wavelength_m
    alpha_np = dust_alpha(scene.dust, lam) * _DB_PER_KM_TO_NP_PER_M
    theta0, phi0, d = _node_geometry(scene)
    sat = scene.orbit_state(t)
    rot = scene.nadir_rotation(t)
    u0 = rot @ los_unit_vector(theta0, phi0)

    ell = dust_path_length(d, theta0, scene.dust.d_max_m)
    f_main = doppler_sensing(sat.velocity_mps, scene.wind_mps,
                             scene.ground.velocity_mps, u0, lam)
    h_main = (
        math.sqrt(scene.ground.rcs_m2) / math.sqrt(fspl_two_way(d, lam))
        * math.exp(-alpha_np * 2.0 * ell)
        * np.exp(1j * 2.0 * math.pi * f_main * t)
    )
    tau_main = 2.0 * d / SPEED_OF_LIGHT_M_S

    nlos = []
    for path in scene.terrain_paths:
        total = path.total_length_m
        # round-trip loss written on the one-way bounce length, per the model
        loss = (4.0 * math.pi * total / lam) ** 4
        ell_i = min(total / math.cos(path.effective_dust_angle_rad),
                    scene.dust.d_max_m)
        u_i = rot @ los_unit_vector(*path.direction)
        f_i = doppler_sensing(sat.velocity_mps, scene.wind_mps,
                              scene.ground.velocity_mps, u_i, lam)
        coeff = (
            1.0 / math.sqrt(loss)
            * math.exp(-alpha_np * ell_i)
            * fresnel_reflection(path.eps_r, path.incidence_rad)
            * np.exp(1j * 2.0 * math.pi * f_i * t)
        )
        nlos.append((complex(coeff), 2.0 * total / SPEED_OF_LIGHT_M_S, f_i, 1.0 + 0.0j))

    return ChannelRealization(
        phase=ChannelPhase.SENSING,
        los_coeff=complex(h_main),
        nlos=tuple(nlos),
        main_delay_s=tau_main,
        main_doppler_hz=f_main,
        misalign=0.0 + 0.0j,
    )


def comm_channel(scene: "ScenarioConfig", t: float, rng_seed: int) -> ChannelRealization:
    """One-way communication channel with Rayleigh NLOS fading.

    h_LOS = exp(-alpha*l) / sqrt(L_FSPL) * exp(j*2*pi*f_comm*t); each NLOS
    path is scaled by an independent xi ~ CN(0,1); the precoding-error term
    enters multiplicatively as (1 + misalign) with misalign ~ CN(0, sigma^2).
    Bitwise reproducible for a fixed seed.
    """
    rng = np.random.default_rng(rng_seed)
    lam = scene.wavelength_m
    alpha_np = dust_alpha(scene.dust, lam) * _DB_PER_KM_TO_NP_PER_M
    theta0, phi0, d = _node_geometry(scene)
    sat = scene.orbit_state(t)
    rot = scene.nadir_rotation(t)
    u0 = rot @ los_unit_vector(theta0, phi0)

    ell = dust_path_length(d, theta0, scene.dust.d_max_m)
    f_los = doppler_comm(sat.velocity_mps, scene.wind_mps,
                         scene.ground.velocity_mps, u0, lam)
    h_los = (
        1.0 / math.sqrt(fspl_one_way(d, lam))
        * math.exp(-alpha_np * ell)
        * np.exp(1j * 2.0 * math.pi * f_los * t)
    )
    tau_los = d / SPEED_OF_LIGHT_M_S

    n_r = len(scene.terrain_paths)
    xi = (rng.standard_normal(n_r) + 1j * rng.standard_normal(n_r)) / math.sqrt(2.0)
    mis = 0.0 + 0.0j
    if scene.sigma_mis2 > 0.0:
        z = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2.0)
        mis = math.sqrt(scene.sigma_mis2) * z

    nlos = []
    for i, path in enumerate(scene.terrain_paths):
        total = path.total_length_m
        loss = (4.0 * math.pi * total / lam) ** 2
        ell_i = min(total / math.cos(path.effective_dust_angle_rad),
                    scene.dust.d_max_m)
        u_i = rot @ los_unit_vector(*path.direction)
        f_i = doppler_comm(sat.velocity_mps, scene.wind_mps,
                           scene.ground.velocity_mps, u_i, lam)
        coeff = (
            1.0 / math.sqrt(loss)
            * math.exp(-alpha_np * ell_i)
            * fresnel_reflection(path.eps_r, path.incidence_rad)
            * np.exp(1j * 2.0 * math.pi * f_i * t)
        )
        nlos.append((complex(coeff), total / SPEED_OF_LIGHT_M_S, f_i, complex(xi[i])))

    return ChannelRealization(
        phase=ChannelPhase.COMMUNICATION,
        los_coeff=complex(h_los),
        nlos=tuple(nlos),
        main_delay_s=tau_los,
        main_doppler_hz=f_los,
        misalign=complex(mis),
    )
