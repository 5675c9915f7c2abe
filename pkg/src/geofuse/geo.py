"""Spherical-earth geodesy and panorama ray geometry.

Conventions:

* Angles in degrees at the API, bearings clockwise from north in ``[0, 360)``.
* Rays are unit vectors in a local east-north-up (ENU) frame.
* Equirectangular panoramas: column ``j`` of a ``W``-column map looks at
  azimuth ``(j - W/2) * 360/W``, so column ``W/2`` faces north; row ``i`` of
  an ``H``-row map looks at elevation ``e * (1 - 2i/H)`` with
  ``e = 90 - crop``, so row ``H/2`` is the horizon. A stride-``s`` encoder
  built from "same"-padded stride-2 convs centres output cell ``j`` on input
  pixel ``s*j``, so a feature map and its source image share this mapping.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ContractViolation

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_CROP_DEG = 40.0


@dataclasses.dataclass(frozen=True)
class GeoLocation:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not math.isfinite(lat) or not math.isfinite(lon):
            raise ContractViolation(f"non-finite location ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise ContractViolation(f"latitude {lat} outside [-90, 90]")
        lon = _normalize_lon(lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)

    def as_tuple(self) -> tuple[float, float]:
        return self.lat, self.lon


def _normalize_lon(lon: float) -> float:
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


# ----------------------------------------------------------------------------
# array kernels (lat/lon in degrees, broadcastable)

def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; vectorised over numpy arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def bearing_deg(lat1, lon1, lat2, lon2):
    """Initial great-circle bearing from point 1 to point 2, in ``[0, 360)``."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    y = np.sin(dlmb) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dlmb)
    b = np.degrees(np.arctan2(y, x)) % 360.0
    return np.where(b >= 360.0, 0.0, b)


def haversine(a: GeoLocation, b: GeoLocation) -> float:
    return float(haversine_m(a.lat, a.lon, b.lat, b.lon))


def _coincident(a: GeoLocation, b: GeoLocation) -> bool:
    return abs(a.lat - b.lat) < 1e-12 and abs(_normalize_lon(a.lon - b.lon)) < 1e-12


def bearing(origin: GeoLocation, to: GeoLocation) -> float:
    if _coincident(origin, to):
        raise ContractViolation("undefined bearing between coincident points")
    return float(bearing_deg(origin.lat, origin.lon, to.lat, to.lon))


# ----------------------------------------------------------------------------
# local tangent plane

def offset_location(origin: GeoLocation, east_m, north_m):
    """Shift ``origin`` by metric offsets on the local tangent plane.

    Returns ``(lat, lon)`` arrays broadcast from the offsets.
    """
    lat = origin.lat + np.degrees(np.asarray(north_m, dtype=np.float64) / EARTH_RADIUS_M)
    lon = origin.lon + np.degrees(np.asarray(east_m, dtype=np.float64)
                                  / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    return lat, lon


def local_offset_m(origin: GeoLocation, lat, lon):
    """Inverse of :func:`offset_location`: ``(east_m, north_m)``."""
    north = np.radians(np.asarray(lat) - origin.lat) * EARTH_RADIUS_M
    east = np.radians(np.asarray(lon) - origin.lon) * EARTH_RADIUS_M * math.cos(math.radians(origin.lat))
    return east, north


# ----------------------------------------------------------------------------
# panorama rays

@dataclasses.dataclass(frozen=True)
class RayField:
    rays: np.ndarray  # H x W x 3, ENU unit vectors
    crop_deg: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.rays.shape[0], self.rays.shape[1]


def pano_angles(height: int, width: int, crop_deg: float = DEFAULT_CROP_DEG):
    """Per-row elevations and per-column azimuths, in degrees."""
    if width < 2 or height < 1:
        raise ContractViolation(f"ray field needs height >= 1 and width >= 2, got {height}x{width}")
    if not 0.0 <= crop_deg < 90.0:
        raise ContractViolation(f"crop must lie in [0, 90), got {crop_deg}")
    e = 90.0 - crop_deg
    elev = e * (1.0 - 2.0 * np.arange(height) / height)
    azim = (np.arange(width) - width / 2) * (360.0 / width)
    return elev, azim


def rays_from_angles(elev_deg, azim_deg) -> np.ndarray:
    el, az = np.radians(elev_deg), np.radians(azim_deg)
    return np.stack([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el),
                     np.broadcast_to(np.sin(el), np.broadcast(az, el).shape)], axis=-1)


def pano_ray_field(feat_h: int, feat_w: int, crop_deg: float = DEFAULT_CROP_DEG) -> RayField:
    elev, azim = pano_angles(feat_h, feat_w, crop_deg)
    rays = rays_from_angles(elev[:, None], azim[None, :])
    return RayField(rays=rays, crop_deg=float(crop_deg))


def rotate_about_zenith(rays: np.ndarray, angle_deg) -> np.ndarray:
    """Rotate ENU rays ``[..., 3]`` so that azimuth ``a`` becomes ``a - angle``.

    ``angle_deg`` broadcasts against ``rays[..., 0]`` with numpy rules.
    """
    a = np.radians(np.asarray(angle_deg, dtype=np.float64))
    c, s = np.cos(a), np.sin(a)
    x, y, z = rays[..., 0], rays[..., 1], rays[..., 2]
    xr, yr = x * c - y * s, y * c + x * s
    return np.stack([xr, yr, np.broadcast_to(z, xr.shape)], axis=-1)


def rotate_toward_target(rays: RayField, camera: GeoLocation, target: GeoLocation) -> RayField:
    """Rotate about the zenith so ``[0, 1, 0]`` points from ``camera`` at ``target``."""
    b = bearing(camera, target)
    return RayField(rays=rotate_about_zenith(rays.rays, b), crop_deg=rays.crop_deg)


def distance_orientation_maps(rays: RayField, camera: GeoLocation, target: GeoLocation):
    """``(dist_map[H,W,1], orient_map[H,W,3])`` for one camera/target pair."""
    orient = rotate_toward_target(rays, camera, target).rays
    H, W = rays.shape
    dist = np.full((H, W, 1), haversine(camera, target))
    return dist, orient


# ----------------------------------------------------------------------------
# overhead geolocation grid

@dataclasses.dataclass(frozen=True)
class GeoGrid:
    lat: np.ndarray  # G x G, row 0 = north, column 0 = west
    lon: np.ndarray
    origin: GeoLocation
    gsd: float
    cell_m: float

    @property
    def size(self) -> int:
        return self.lat.shape[0]

    def location(self, row: int, col: int) -> GeoLocation:
        return GeoLocation(float(self.lat[row, col]), float(self.lon[row, col]))

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major ``(lat, lon)`` vectors of length ``G*G``."""
        return self.lat.reshape(-1), self.lon.reshape(-1)


def cell_offsets_m(image_px: int, gsd_m: float, grid: int):
    """East/north offsets (meters) of grid-cell centers from the image center."""
    if grid <= 0 or image_px % grid:
        raise ContractViolation(f"grid {grid} must be a positive divisor of {image_px}")
    cell = gsd_m * image_px / grid
    k = np.arange(grid) + 0.5 - grid / 2.0
    east = np.broadcast_to(k[None, :] * cell, (grid, grid))
    north = np.broadcast_to(-k[:, None] * cell, (grid, grid))
    return east, north, cell


def overhead_geogrid(center: GeoLocation, image_px: int, gsd_m: float, grid: int) -> GeoGrid:
    east, north, cell = cell_offsets_m(image_px, gsd_m, grid)
    lat, lon = offset_location(center, east, north)
    return GeoGrid(lat=np.array(lat), lon=np.array(lon), origin=center, gsd=float(gsd_m), cell_m=cell)
