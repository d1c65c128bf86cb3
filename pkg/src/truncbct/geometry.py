"""Circular-trajectory cone-beam acquisition geometry.

World frame: right-handed, isocenter at the origin, rotation axis +z.
At view angle beta (degrees, counterclockwise from +x) the source sits at
(sid*cos(beta), sid*sin(beta), 0) and the flat detector is centered on the
source-isocenter axis at distance sdd from the source, columns along
u_hat = (-sin(beta), cos(beta), 0) and rows along +z.  The same frame is used
for the physical detector and the wider extended virtual detector; both are
laterally centered, so the physical columns coincide with the central window
of the virtual ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Invalid or inconsistent acquisition geometry."""


#: Default scanner parameters (mobile C-arm class system).
DEFAULT_GEOMETRY = {
    "sdd_mm": 1164.0,
    "sid_mm": 622.0,
    "det_cols": 500,
    "det_rows": 680,
    "virt_cols": 1200,
    "pixel_w_mm": 0.608,
    "pixel_h_mm": 0.608,
    "angular_range_deg": 200.0,
    "angular_step_deg": 0.5,
    "start_angle_deg": 0.0,
}


@dataclass(frozen=True)
class SystemGeometry:
    sdd_mm: float
    sid_mm: float
    det_cols: int
    det_rows: int
    virt_cols: int
    pixel_w_mm: float
    pixel_h_mm: float
    angular_range_deg: float
    angular_step_deg: float
    start_angle_deg: float = 0.0

    @property
    def n_views(self) -> int:
        return int(round(self.angular_range_deg / self.angular_step_deg))

    def cols(self, use_virtual: bool) -> int:
        return self.virt_cols if use_virtual else self.det_cols

    def half_width_mm(self, use_virtual: bool) -> float:
        return self.cols(use_virtual) * self.pixel_w_mm / 2.0

    def half_fan_rad(self, use_virtual: bool) -> float:
        """Half opening angle of the fan subtended by the detector width."""
        return math.atan(self.half_width_mm(use_virtual) / self.sdd_mm)

    def to_dict(self) -> dict:
        return {
            "sdd_mm": self.sdd_mm,
            "sid_mm": self.sid_mm,
            "det_cols": self.det_cols,
            "det_rows": self.det_rows,
            "virt_cols": self.virt_cols,
            "pixel_w_mm": self.pixel_w_mm,
            "pixel_h_mm": self.pixel_h_mm,
            "angular_range_deg": self.angular_range_deg,
            "angular_step_deg": self.angular_step_deg,
            "start_angle_deg": self.start_angle_deg,
        }


@dataclass(frozen=True)
class Ray:
    """A single measurement ray: source origin and unit direction (mm frame)."""

    origin: np.ndarray
    direction: np.ndarray


def build_geometry(config: dict | None = None) -> SystemGeometry:
    """Validate a parameter map and return the geometry; missing keys use defaults."""
    params = dict(DEFAULT_GEOMETRY)
    if config:
        unknown = set(config) - set(DEFAULT_GEOMETRY)
        if unknown:
            raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
        params.update(config)

    geom = SystemGeometry(
        sdd_mm=float(params["sdd_mm"]),
        sid_mm=float(params["sid_mm"]),
        det_cols=int(params["det_cols"]),
        det_rows=int(params["det_rows"]),
        virt_cols=int(params["virt_cols"]),
        pixel_w_mm=float(params["pixel_w_mm"]),
        pixel_h_mm=float(params["pixel_h_mm"]),
        angular_range_deg=float(params["angular_range_deg"]),
        angular_step_deg=float(params["angular_step_deg"]),
        start_angle_deg=float(params["start_angle_deg"]),
    )

    if geom.sid_mm <= 0:
        raise GeometryError("sid_mm must be positive")
    if geom.sdd_mm <= geom.sid_mm:
        raise GeometryError("sdd_mm must exceed sid_mm")
    if geom.det_cols <= 0 or geom.det_rows <= 0:
        raise GeometryError("detector dimensions must be positive")
    if geom.virt_cols < geom.det_cols:
        raise GeometryError("virt_cols must be >= det_cols")
    if (geom.virt_cols - geom.det_cols) % 2 != 0:
        # centering both widths on the axis requires a whole-column margin per side
        raise GeometryError("virt_cols - det_cols must be even")
    if geom.pixel_w_mm <= 0 or geom.pixel_h_mm <= 0:
        raise GeometryError("pixel pitches must be positive")
    if geom.angular_step_deg <= 0 or geom.angular_range_deg <= 0:
        raise GeometryError("angular range and step must be positive")
    n = geom.angular_range_deg / geom.angular_step_deg
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        raise GeometryError("angular_range_deg / angular_step_deg must be a positive integer")
    return geom


def view_angles(geom: SystemGeometry) -> np.ndarray:
    """View angles in degrees: start + k*step for k = 0..n_views-1 (end exclusive)."""
    return geom.start_angle_deg + np.arange(geom.n_views) * geom.angular_step_deg


def view_angles_rad(geom: SystemGeometry) -> np.ndarray:
    return np.deg2rad(view_angles(geom))


def fov_radius_mm(geom: SystemGeometry, use_virtual: bool = False) -> float:
    """Radius of the cylinder seen by every view of the selected detector width."""
    return geom.sid_mm * math.sin(geom.half_fan_rad(use_virtual))


def source_position(geom: SystemGeometry, beta_rad: float) -> np.ndarray:
    c, s = math.cos(beta_rad), math.sin(beta_rad)
    return np.array([geom.sid_mm * c, geom.sid_mm * s, 0.0])


def detector_u_offsets_mm(geom: SystemGeometry, use_virtual: bool) -> np.ndarray:
    """Signed lateral pixel-center offsets (mm) from the detector center, per column."""
    n = geom.cols(use_virtual)
    return (np.arange(n) - (n - 1) / 2.0) * geom.pixel_w_mm


def detector_v_offsets_mm(geom: SystemGeometry) -> np.ndarray:
    return (np.arange(geom.det_rows) - (geom.det_rows - 1) / 2.0) * geom.pixel_h_mm


def ray_for_pixel(geom: SystemGeometry, view_index: int, row: int, col: int, use_virtual: bool = False) -> Ray:
    """Ray from the source through the center of detector pixel (row, col)."""
    n_cols = geom.cols(use_virtual)
    if not (0 <= view_index < geom.n_views):
        raise GeometryError(f"view_index {view_index} out of range [0, {geom.n_views})")
    if not (0 <= row < geom.det_rows):
        raise GeometryError(f"row {row} out of range [0, {geom.det_rows})")
    if not (0 <= col < n_cols):
        raise GeometryError(f"col {col} out of range [0, {n_cols})")

    beta = math.radians(geom.start_angle_deg + view_index * geom.angular_step_deg)
    c, s = math.cos(beta), math.sin(beta)
    origin = np.array([geom.sid_mm * c, geom.sid_mm * s, 0.0])
    u = (col - (n_cols - 1) / 2.0) * geom.pixel_w_mm
    v = (row - (geom.det_rows - 1) / 2.0) * geom.pixel_h_mm
    pixel = np.array(
        [
            (geom.sid_mm - geom.sdd_mm) * c - u * s,
            (geom.sid_mm - geom.sdd_mm) * s + u * c,
            v,
        ]
    )
    direction = pixel - origin
    direction = direction / np.linalg.norm(direction)
    return Ray(origin=origin, direction=direction)
