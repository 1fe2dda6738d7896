"""LEO downlink budget: slant range, thermal noise, free-space loss and SNR.

All arithmetic is double precision. Distances are in km at the API surface
and converted to meters only inside the path-loss formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

EARTH_RADIUS_KM = 6378.0
BOLTZMANN = 1.380649e-23  # J/K
SPEED_OF_LIGHT = 299_792_458.0  # m/s


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


@dataclass(frozen=True)
class LinkParams:
    """Orbit and RF parameters of the downlink. Defaults are the S-band
    values of a 150 km orbit small-satellite link."""

    orbit_height_km: float = 150.0
    carrier_hz: float = 2150e6
    tx_power_w: float = 1.0
    tx_gain_dbi: float = 6.0
    rx_gain_dbi: float = 35.0
    bandwidth_hz: float = 750e3
    noise_figure_db: float = 2.0
    antenna_temp_k: float = 290.0
    ref_temp_k: float = 290.0

    def __post_init__(self):
        positive = ("orbit_height_km", "carrier_hz", "tx_power_w",
                    "bandwidth_hz", "antenna_temp_k", "ref_temp_k")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("tx_gain_dbi", "rx_gain_dbi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (math.isfinite(self.noise_figure_db) and self.noise_figure_db >= 0):
            raise ValueError(f"noise_figure_db must be >= 0, got {self.noise_figure_db!r}")

    def with_overrides(self, **kwargs) -> "LinkParams":
        unknown = set(kwargs) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown link parameters {sorted(unknown)}")
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ThermalNoise:
    receiver_temp_k: float
    system_temp_k: float
    power_w: float

    @property
    def power_dbw(self) -> float:
        return linear_to_db(self.power_w)


@dataclass(frozen=True)
class SnrReport:
    elevation_deg: float
    slant_range_km: float
    path_loss_db: float
    noise_power_dbw: float
    snr_db: float

    CSV_HEADER = "elevation_deg,slant_km,loss_db,noise_dbw,snr_db"

    def csv_row(self) -> str:
        return (f"{self.elevation_deg:.6g},{self.slant_range_km:.6f},"
                f"{self.path_loss_db:.6f},{self.noise_power_dbw:.6f},{self.snr_db:.6f}")

    def describe(self) -> str:
        return (f"elevation      {self.elevation_deg:10.3f} deg\n"
                f"slant range    {self.slant_range_km:10.3f} km\n"
                f"path loss      {self.path_loss_db:10.3f} dB\n"
                f"noise power    {self.noise_power_dbw:10.3f} dBW\n"
                f"SNR            {self.snr_db:10.3f} dB")


def slant_range(elevation_deg: float, orbit_height_km: float) -> float:
    """Distance in km from ground station to satellite seen at `elevation_deg`."""
    if not (0.0 < elevation_deg <= 90.0):
        raise ValueError(f"elevation must be in (0, 90] degrees, got {elevation_deg!r}")
    if not orbit_height_km > 0:
        raise ValueError(f"orbit height must be positive, got {orbit_height_km!r}")
    eps = math.radians(elevation_deg)
    ratio = (orbit_height_km + EARTH_RADIUS_KM) / EARTH_RADIUS_KM
    return EARTH_RADIUS_KM * (math.sqrt(ratio * ratio - math.cos(eps) ** 2) - math.sin(eps))


def thermal_noise(params: LinkParams) -> ThermalNoise:
    noise_factor = db_to_linear(params.noise_figure_db)
    t_receiver = params.ref_temp_k * (noise_factor - 1.0)
    t_system = params.antenna_temp_k + t_receiver
    return ThermalNoise(t_receiver, t_system, BOLTZMANN * t_system * params.bandwidth_hz)


def path_loss_friis(distance_km: float, carrier_hz: float) -> float:
    """Free-space path loss 20 log10(4 pi d f / c) in dB."""
    if not distance_km > 0 or not carrier_hz > 0:
        raise ValueError("distance and carrier frequency must be positive")
    return 20.0 * math.log10(4.0 * math.pi * distance_km * 1e3 * carrier_hz / SPEED_OF_LIGHT)


def snr(params: LinkParams, elevation_deg: float) -> SnrReport:
    distance = slant_range(elevation_deg, params.orbit_height_km)
    loss = path_loss_friis(distance, params.carrier_hz)
    noise_dbw = thermal_noise(params).power_dbw
    snr_db = (linear_to_db(params.tx_power_w) + params.tx_gain_dbi + params.rx_gain_dbi
              - loss - noise_dbw)
    return SnrReport(float(elevation_deg), distance, loss, noise_dbw, snr_db)


def noise_sigma_squared(snr_db: float, signal_power: float = 1.0) -> float:
    """Per-component noise variance for a complex channel.

    The total complex noise power is twice the returned value, i.e.
    ``signal_power * 10**(-snr_db / 10)``.
    """
    if not signal_power > 0:
        raise ValueError(f"signal power must be positive, got {signal_power!r}")
    return signal_power / (2.0 * db_to_linear(snr_db))
