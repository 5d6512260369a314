"""Satellite-pass geometry and free-space optical loss budget.

Models a circular-orbit pass directly over the ground station: elevation,
slant range and range rate as functions of time, plus the diffraction-
limited geometric loss of a Gaussian downlink beam and a two-anchor
airmass model for atmospheric absorption.  All loss terms are positive dB
attenuations that sum to the channel total.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
GM_EARTH_KM3_S2 = 398600.4418
SPEED_OF_LIGHT_KM_S = 299792.458

# Two calibrated absorption anchors per band: (zenith dB, dB at 10 deg
# elevation), interpolated linearly in airmass = 1/sin(elevation).
_ATMOSPHERE_ANCHORS = {
    "quantum_785": (2.5, 7.9),
    "beacon_905": (0.2, 7.9),
}
_ANCHOR_LOW_ELEVATION_DEG = 10.0


@dataclass(frozen=True)
class OrbitConfig:
    altitude_km: float = 500.0
    earth_radius_km: float = EARTH_RADIUS_KM
    min_elevation_deg: float = 10.0

    def __post_init__(self) -> None:
        if self.altitude_km <= 0:
            raise ValueError("altitude must be positive")
        if not 0.0 < self.min_elevation_deg < 90.0:
            raise ValueError("min elevation must be in (0, 90) degrees")

    @property
    def orbit_radius_km(self) -> float:
        return self.earth_radius_km + self.altitude_km

    @property
    def angular_rate_rad_s(self) -> float:
        """Circular-orbit angular rate sqrt(GM / r^3)."""
        return math.sqrt(GM_EARTH_KM3_S2 / self.orbit_radius_km ** 3)


@dataclass(frozen=True)
class PassSample:
    """Geometry at one instant of a pass; t is seconds from culmination."""

    t_s: float
    elevation_deg: float
    slant_range_km: float
    radial_velocity_km_s: float


@dataclass(frozen=True)
class BeamConfig:
    """Downlink beam description.

    The divergence may be given directly (overriding the waist-derived
    value).  Divergences are half-angles at 1/e^2 intensity; set
    divergence_is_full_angle=True when a quoted figure is a full angle,
    in which case it is halved on resolution.
    """

    wavelength_nm: float
    waist_radius_mm: float | None = None
    m_squared: float = 1.0
    divergence_half_angle_urad: float | None = None
    divergence_is_full_angle: bool = False

    def __post_init__(self) -> None:
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength must be positive")
        if self.m_squared < 1.0:
            raise ValueError("M^2 must be >= 1")
        if self.waist_radius_mm is None and self.divergence_half_angle_urad is None:
            raise ValueError("either waist radius or divergence must be given")

    @property
    def half_angle_rad(self) -> float:
        if self.divergence_half_angle_urad is not None:
            theta = self.divergence_half_angle_urad * 1e-6
            if self.divergence_is_full_angle:
                theta *= 0.5
            if theta <= 0:
                raise ValueError("divergence must be positive")
            return theta
        return divergence_from_waist(self)


@dataclass(frozen=True)
class LossBudget:
    """Named dB attenuation terms of one optical channel."""

    tx_internal_db: float = 0.0
    geometric_db: float = 0.0
    turbulence_pointing_db: float = 0.0
    atmospheric_db: float = 0.0
    ogs_internal_db: float = 0.0
    detector_efficiency_db: float = 0.0
    channel_kind: str = "quantum"

    def __post_init__(self) -> None:
        for name in ("tx_internal_db", "geometric_db", "turbulence_pointing_db",
                     "atmospheric_db", "ogs_internal_db", "detector_efficiency_db"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0 dB")
        if self.channel_kind not in ("quantum", "beacon"):
            raise ValueError("channel_kind must be 'quantum' or 'beacon'")


def slant_range(elevation_deg: float, orbit: OrbitConfig) -> float:
    """Line-of-sight distance (km) to the satellite at a given elevation.

    Law-of-cosines solution of the ground-station / Earth-centre /
    satellite triangle; strictly decreasing in elevation.
    """
    if not 0.0 <= elevation_deg <= 90.0:
        raise ValueError("elevation must be in [0, 90] degrees")
    e = math.radians(elevation_deg)
    re = orbit.earth_radius_km
    r = orbit.orbit_radius_km
    return math.sqrt(r * r - (re * math.cos(e)) ** 2) - re * math.sin(e)


def _geometry_at_central_angle(phi: float, orbit: OrbitConfig) -> tuple[float, float]:
    """(elevation_deg, slant_range_km) for central angle phi from culmination."""
    re = orbit.earth_radius_km
    r = orbit.orbit_radius_km
    d = math.sqrt(re * re + r * r - 2.0 * re * r * math.cos(phi))
    # Elevation from the sine rule: cos(E) = (r/d) * sin(phi).
    cos_e = min(1.0, max(-1.0, (r / d) * math.sin(phi)))
    return math.degrees(math.acos(cos_e)), d


def pass_profile(orbit: OrbitConfig, timestep_s: float) -> list[PassSample]:
    """Sample a direct overhead pass, symmetric about culmination.

    The satellite moves on a circular orbit through zenith; Earth rotation
    is neglected.  Samples run from the first instant the elevation
    exceeds min_elevation_deg to the last, at the given timestep; the
    radial velocity is a central finite difference of the range profile.
    """
    if timestep_s <= 0:
        raise ValueError("timestep must be positive")
    omega = orbit.angular_rate_rad_s
    # Find the largest sample count k with elevation(k*dt) >= min elevation.
    k_max = 0
    while True:
        phi = omega * (k_max + 1) * timestep_s
        if phi >= math.pi / 2:
            break
        elev, _ = _geometry_at_central_angle(phi, orbit)
        if elev < orbit.min_elevation_deg:
            break
        k_max += 1
    ks = np.arange(-k_max, k_max + 1)
    t = ks * timestep_s
    geom = [_geometry_at_central_angle(abs(omega * ti), orbit) for ti in t]
    elev = np.array([g[0] for g in geom])
    rng = np.array([g[1] for g in geom])
    if elev.size == 0 or elev.max() < orbit.min_elevation_deg:
        return []
    vr = np.gradient(rng, timestep_s) if len(t) > 1 else np.zeros(1)
    return [PassSample(float(ti), float(ei), float(ri), float(vi))
            for ti, ei, ri, vi in zip(t, elev, rng, vr)]


def divergence_from_waist(beam: BeamConfig) -> float:
    """Diffraction-limited 1/e^2 half angle (rad) of a Gaussian beam,

    lambda / (pi * waist) scaled by the beam-quality factor M^2.
    """
    if beam.waist_radius_mm is None or beam.waist_radius_mm <= 0:
        raise ValueError("waist radius must be positive")
    return beam.wavelength_nm * 1e-9 / (math.pi * beam.waist_radius_mm * 1e-3) \
        * beam.m_squared


def geometric_loss_db(divergence_half_angle_rad: float, distance_km: float,
                      rx_diameter_m: float) -> float:
    """Diffraction (geometric) loss of the downlink beam in dB.

    The far-field footprint radius is tan(theta) * d; integrating the
    Gaussian intensity over the receiver aperture gives the collected
    fraction T = 1 - exp(-D^2 / (2 R^2)), which reduces to D^2/(2R^2)
    for apertures much smaller than the footprint.
    """
    if divergence_half_angle_rad <= 0 or distance_km <= 0 or rx_diameter_m <= 0:
        raise ValueError("divergence, distance and aperture must be positive")
    footprint_m = math.tan(divergence_half_angle_rad) * distance_km * 1e3
    transmission = 1.0 - math.exp(-rx_diameter_m ** 2 / (2.0 * footprint_m ** 2))
    return -10.0 * math.log10(transmission)


def atmospheric_loss_db(elevation_deg: float, band: str) -> float:
    """Absorption loss (dB) interpolated linearly in airmass between the
    band's zenith and 10-degree anchors; clamped outside the anchor range."""
    if band not in _ATMOSPHERE_ANCHORS:
        raise ValueError(f"unknown band {band!r}; expected one of "
                         f"{sorted(_ATMOSPHERE_ANCHORS)}")
    if not 0.0 < elevation_deg <= 90.0:
        raise ValueError("elevation must be in (0, 90] degrees")
    zenith_db, low_db = _ATMOSPHERE_ANCHORS[band]
    airmass = 1.0 / math.sin(math.radians(elevation_deg))
    airmass_low = 1.0 / math.sin(math.radians(_ANCHOR_LOW_ELEVATION_DEG))
    if airmass <= 1.0:
        return zenith_db
    if airmass >= airmass_low:
        return low_db
    frac = (airmass - 1.0) / (airmass_low - 1.0)
    return zenith_db + frac * (low_db - zenith_db)


def total_loss_db(budget: LossBudget) -> float:
    """Arithmetic sum of the budget's dB terms."""
    return (budget.tx_internal_db + budget.geometric_db
            + budget.turbulence_pointing_db + budget.atmospheric_db
            + budget.ogs_internal_db + budget.detector_efficiency_db)


def doppler_relative_shift(radial_velocity_km_s: float) -> float:
    """First-order relative frequency shift v/c (signed)."""
    if abs(radial_velocity_km_s) >= 30.0:
        raise ValueError("radial velocity outside the +-30 km/s sanity bound")
    return radial_velocity_km_s / SPEED_OF_LIGHT_KM_S


@dataclass(frozen=True)
class ChannelModel:
    """Beam plus the fixed per-channel budget terms, for pass-resolved totals."""

    beam: BeamConfig
    rx_diameter_m: float
    band: str
    tx_internal_db: float
    turbulence_pointing_db: float
    ogs_internal_db: float
    detector_efficiency_db: float
    channel_kind: str = "quantum"

    def budget_at(self, elevation_deg: float, slant_range_km: float) -> LossBudget:
        return LossBudget(
            tx_internal_db=self.tx_internal_db,
            geometric_db=geometric_loss_db(self.beam.half_angle_rad,
                                           slant_range_km, self.rx_diameter_m),
            turbulence_pointing_db=self.turbulence_pointing_db,
            atmospheric_db=atmospheric_loss_db(elevation_deg, self.band),
            ogs_internal_db=self.ogs_internal_db,
            detector_efficiency_db=self.detector_efficiency_db,
            channel_kind=self.channel_kind,
        )

    def loss_at(self, elevation_deg: float, slant_range_km: float) -> float:
        return total_loss_db(self.budget_at(elevation_deg, slant_range_km))


def pass_loss_rows(orbit: OrbitConfig, timestep_s: float,
                   quantum: ChannelModel, beacon: ChannelModel) -> list[dict]:
    """Pass profile with per-sample channel totals, one dict per sample.

    Column order matches the emitted CSV: t_s, elevation_deg,
    slant_range_km, radial_velocity_km_s, quantum_loss_db, beacon_loss_db.
    """
    rows = []
    for s in pass_profile(orbit, timestep_s):
        rows.append({
            "t_s": s.t_s,
            "elevation_deg": s.elevation_deg,
            "slant_range_km": s.slant_range_km,
            "radial_velocity_km_s": s.radial_velocity_km_s,
            "quantum_loss_db": quantum.loss_at(s.elevation_deg, s.slant_range_km),
            "beacon_loss_db": beacon.loss_at(s.elevation_deg, s.slant_range_km),
        })
    return rows
