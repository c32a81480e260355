"""Link budget: diffraction, atmosphere and detector efficiencies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from bellshadow.geodyn import LinkGeometry


class Direction(str, Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"


@dataclass(frozen=True)
class ChannelParams:
    wavelength: float = 810e-9
    sat_radius: float = 0.10
    gs_radius: float = 0.60
    det_eff_sat: float = 0.5
    det_eff_gs: float = 0.5
    atm_zenith_transmittance: float = 0.5

    def __post_init__(self):
        if self.wavelength <= 0 or self.sat_radius <= 0 or self.gs_radius <= 0:
            raise ValueError("wavelength and aperture radii must be positive")
        for name in ("det_eff_sat", "det_eff_gs", "atm_zenith_transmittance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def apertures(self, direction: Direction | str) -> tuple[float, float]:
        """(transmit, receive) aperture radii."""
        if Direction(direction) is Direction.DOWNLINK:
            return self.sat_radius, self.gs_radius
        return self.gs_radius, self.sat_radius


@dataclass(frozen=True)
class LinkEfficiency:
    eta_fs: float
    eta_atm: float
    eta_total: float
    direction: Direction


def beam_radius(w0, wavelength, distance):
    zr = math.pi * w0 ** 2 / wavelength
    return w0 * np.sqrt(1.0 + (np.asarray(distance) / zr) ** 2)


def free_space_transmittance(params: ChannelParams, distance, direction: Direction | str):
    """Fraction of a Gaussian beam, waist at the transmit aperture, caught by the receiver."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("link distance must be positive")
    w0, r_rx = params.apertures(direction)
    w = beam_radius(w0, params.wavelength, d)
    eta = np.clip(-np.expm1(-2.0 * r_rx ** 2 / w ** 2), 0.0, 1.0)
    return float(eta) if eta.ndim == 0 else eta


def atmospheric_transmittance(params: ChannelParams, zenith_angle):
    """Beer-Lambert with secant air mass; zero at and below the horizon."""
    z = np.asarray(zenith_angle, dtype=float)
    return _atm_from_cos(params, np.cos(z), horizon=z >= math.pi / 2)


def atm_from_cos_zenith(params: ChannelParams, cos_z):
    cos_z = np.asarray(cos_z, dtype=float)
    return _atm_from_cos(params, cos_z, horizon=cos_z <= 0.0)


def _atm_from_cos(params, cos_z, horizon):
    t0 = params.atm_zenith_transmittance
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if t0 == 1.0:
            out = np.ones_like(cos_z)
        elif t0 == 0.0:
            out = np.zeros_like(cos_z)
        else:
            out = np.exp(math.log(t0) / cos_z)
    out = np.where(horizon, 0.0, np.clip(out, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def link_efficiency(params: ChannelParams, geom: LinkGeometry, direction: Direction | str) -> LinkEfficiency:
    if not geom.visible:
        raise ValueError("link is below the horizon")
    direction = Direction(direction)
    eta_fs = free_space_transmittance(params, geom.distance, direction)
    eta_atm = atmospheric_transmittance(params, geom.zenith_angle)
    total = eta_fs * eta_atm * params.det_eff_sat * params.det_eff_gs
    return LinkEfficiency(eta_fs, eta_atm, total, direction)


def channel_transmittance(params: ChannelParams, distance, cos_z, direction):
    """eta_fs * eta_atm for arrays of links; zero where the link is not visible."""
    visible = np.asarray(cos_z) > 0.0
    d = np.where(visible, distance, 1.0)
    eta = free_space_transmittance(params, d, direction) * atm_from_cos_zenith(params, cos_z)
    return np.where(visible, eta, 0.0)
