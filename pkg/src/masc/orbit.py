"""Circular-orbit kinematics and visible-region geometry over a spherical Mars.

All angles are radians, all distances metres. The off-nadir grid angle theta
is measured at the Mars centre, so the slant range follows from the law of
cosines on the (centre, satellite, ground point) triangle and the visible
cone ends at theta_max = arccos(r / (r + h)), where the slant range equals
the tangent range sqrt((r + h)^2 - r^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MARS_RADIUS_M = 3_389_500.0
MU_MARS_M3_S2 = 4.28e13


class VisibilityError(ValueError):
    """Raised when a direction lies outside the visible cone."""


@dataclass(frozen=True)
class OrbitConfig:
    """Circular orbit description.

    The 200-800 km mission altitude band is enforced at scenario validation,
    not here, so normalized unit-sphere configurations remain constructible.
    """

    altitude_m: float
    mars_radius_m: float = MARS_RADIUS_M
    mu_mars: float = MU_MARS_M3_S2
    phase0_rad: float = 0.0

    def __post_init__(self):
        if self.altitude_m < 0.0:
            raise ValueError(f"altitude_m must be >= 0, got {self.altitude_m}")
        if self.mars_radius_m <= 0.0:
            raise ValueError("mars_radius_m must be positive")
        if self.mu_mars <= 0.0:
            raise ValueError("mu_mars must be positive")

    @property
    def orbit_radius_m(self) -> float:
        return self.mars_radius_m + self.altitude_m

    @property
    def theta_max_rad(self) -> float:
        return math.acos(self.mars_radius_m / self.orbit_radius_m)


@dataclass(frozen=True)
class OrbitState:
    """Satellite kinematic state at one instant (Mars-centred inertial frame)."""

    time_s: float
    position_m: np.ndarray
    velocity_mps: np.ndarray
    elevation_rad: float
    orbital_phase_rad: float

    @property
    def speed_mps(self) -> float:
        return float(np.linalg.norm(self.velocity_mps))


@dataclass(frozen=True)
class VisibleRegion:
    """Midpoint grid over the visible cone with exact per-cell solid angles."""

    theta_max_rad: float
    solid_angle_sr: float
    theta_rad: np.ndarray     # (n_theta,) band centres
    phi_rad: np.ndarray       # (n_phi,) azimuth centres
    weight_sr: np.ndarray     # (n_theta, n_phi) exact cell solid angles

    @property
    def shape(self) -> tuple[int, int]:
        return (self.theta_rad.size, self.phi_rad.size)

    @property
    def n_cells(self) -> int:
        return self.theta_rad.size * self.phi_rad.size

    def cells(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (theta, phi, weight) arrays in row-major (theta, phi) order."""
        tt, pp = np.meshgrid(self.theta_rad, self.phi_rad, indexing="ij")
        return tt.ravel(), pp.ravel(), self.weight_sr.ravel()


def orbital_period(cfg: OrbitConfig) -> float:
    """Keplerian period 2*pi*sqrt(a^3 / mu) of the circular orbit, seconds."""
    a = cfg.orbit_radius_m
    return 2.0 * math.pi * math.sqrt(a ** 3 / cfg.mu_mars)


def orbital_speed(cfg: OrbitConfig) -> float:
    """Circular-orbit speed sqrt(mu / (r + h)), m/s."""
    return math.sqrt(cfg.mu_mars / cfg.orbit_radius_m)


def state_at(cfg: OrbitConfig, t: float) -> OrbitState:
    """Satellite state at time t >= 0 for an equatorial-plane circular orbit.

    Position traces the orbit circle at phase phi(t) = phase0 + 2*pi*t/T;
    the velocity direction is [-sin(phi), cos(phi), 0] and the elevation
    angle seen from the sub-satellite track is arcsin(r/(r+h)) * cos(phi(t)).
    """
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    period = orbital_period(cfg)
    phase = cfg.phase0_rad + 2.0 * math.pi * t / period
    radius = cfg.orbit_radius_m
    speed = orbital_speed(cfg)
    position = radius * np.array([math.cos(phase), math.sin(phase), 0.0])
    velocity = speed * np.array([-math.sin(phase), math.cos(phase), 0.0])
    elevation = math.asin(cfg.mars_radius_m / radius) * math.cos(phase)
    return OrbitState(
        time_s=t,
        position_m=position,
        velocity_mps=velocity,
        elevation_rad=elevation,
        orbital_phase_rad=phase,
    )


def slant_range(cfg: OrbitConfig, theta_rad: float) -> float:
    """Satellite-to-ground distance at Mars-central off-nadir angle theta.

    Law of cosines with boresight at nadir: d(0) = h and d(theta_max) equals
    the tangent range sqrt((r+h)^2 - r^2); d is monotone increasing.
    """
    theta_max = cfg.theta_max_rad
    if theta_rad < 0.0 or theta_rad > theta_max + 1e-12:
        raise VisibilityError(
            f"theta {theta_rad:.6f} rad outside visible cone [0, {theta_max:.6f}]"
        )
    r = cfg.mars_radius_m
    rs = cfg.orbit_radius_m
    d_sq = r * r + rs * rs - 2.0 * r * rs * math.cos(min(theta_rad, theta_max))
    return math.sqrt(d_sq)


def visible_region(cfg: OrbitConfig, n_theta: int, n_phi: int) -> VisibleRegion:
    """Uniform (theta, phi) midpoint grid over the visible cone.

    Per-cell weights use the exact band integral of sin(theta), so the weight
    sum equals 2*pi*(1 - cos(theta_max)) to machine precision for any grid.
    """
    if n_theta < 2 or n_phi < 2:
        raise ValueError("n_theta and n_phi must both be >= 2")
    theta_max = cfg.theta_max_rad
    d_theta = theta_max / n_theta
    d_phi = 2.0 * math.pi / n_phi
    edges = np.linspace(0.0, theta_max, n_theta + 1)
    thetas = 0.5 * (edges[:-1] + edges[1:])
    phis = (np.arange(n_phi) + 0.5) * d_phi
    band = (np.cos(edges[:-1]) - np.cos(edges[1:])) * d_phi  # exact per cell
    weights = np.repeat(band[:, None], n_phi, axis=1)
    return VisibleRegion(
        theta_max_rad=theta_max,
        solid_angle_sr=2.0 * math.pi * (1.0 - math.cos(theta_max)),
        theta_rad=thetas,
        phi_rad=phis,
        weight_sr=weights,
    )


def los_unit_vector(theta_rad, phi_rad) -> np.ndarray:
    """Unit line-of-sight vector, physics convention (polar from nadir axis).

    Accepts scalars or broadcastable arrays; returns shape (..., 3).
    """
    theta = np.asarray(theta_rad, dtype=float)
    phi = np.asarray(phi_rad, dtype=float)
    st = np.sin(theta)
    return np.stack(
        [st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)],
        axis=-1,
    )


def nadir_frame(state: OrbitState) -> np.ndarray:
    """Rotation matrix whose columns map satellite-frame axes to global axes.

    z points at nadir (toward the Mars centre), x along-track, y completes
    the right-handed triad.
    """
    z_axis = -state.position_m / np.linalg.norm(state.position_m)
    x_axis = state.velocity_mps / np.linalg.norm(state.velocity_mps)
    y_axis = np.cross(z_axis, x_axis)
    return np.column_stack([x_axis, y_axis, z_axis])
