"""Volumes, masks, HU/attenuation conversion, analytic phantoms and raw-file I/O.

Grids are stored as C-ordered float32 arrays of shape (nz, ny, nx) so that the
on-disk order is x-fastest, then y, then z.  Voxel centers lie at
offset + (i - (n-1)/2) * voxel_mm per axis, i.e. grids are centered on the
isocenter unless an offset is given.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

#: Water attenuation used for HU conversion, mm^-1 (about 70 keV effective energy).
MU_WATER_MM = 0.0193

UNIT_HU = "HU"
UNIT_MU = "attenuation"
UNIT_MASK = "mask"

AIR_HU = -1000.0


class VolumeError(ValueError):
    """Inconsistent volume data, grid mismatch or bad unit tag."""


def _check_grid(dims, voxel_mm):
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise VolumeError(f"dims must be three positive integers, got {dims!r}")
    if len(voxel_mm) != 3 or any(float(v) <= 0 for v in voxel_mm):
        raise VolumeError(f"voxel_mm must be three positive lengths, got {voxel_mm!r}")


@dataclass
class Volume3D:
    """Scalar 3D grid in HU or attenuation (mm^-1) units."""

    values: np.ndarray  # (nz, ny, nx) float32
    voxel_mm: tuple[float, float, float]
    unit: str
    offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise VolumeError("values must be a 3D array (nz, ny, nx)")
        self.voxel_mm = tuple(float(v) for v in self.voxel_mm)
        self.offset_mm = tuple(float(v) for v in self.offset_mm)
        _check_grid(self.dims, self.voxel_mm)
        if self.unit not in (UNIT_HU, UNIT_MU):
            raise VolumeError(f"unknown unit {self.unit!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def axis_coords(self, axis: int) -> np.ndarray:
        """Voxel-center coordinates (mm) along axis 0=x, 1=y, 2=z."""
        n = self.dims[axis]
        return self.offset_mm[axis] + (np.arange(n) - (n - 1) / 2.0) * self.voxel_mm[axis]

    def same_grid(self, other) -> bool:
        return (
            self.values.shape == other.values.shape
            and self.voxel_mm == other.voxel_mm
            and self.offset_mm == other.offset_mm
        )


@dataclass
class MaskVolume:
    """Binary mask on the same grid layout as :class:`Volume3D`."""

    values: np.ndarray  # (nz, ny, nx) bool
    voxel_mm: tuple[float, float, float]
    offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=bool)
        if self.values.ndim != 3:
            raise VolumeError("mask values must be a 3D array (nz, ny, nx)")
        self.voxel_mm = tuple(float(v) for v in self.voxel_mm)
        self.offset_mm = tuple(float(v) for v in self.offset_mm)
        _check_grid(self.dims, self.voxel_mm)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return (nx, ny, nz)

    def same_grid(self, other) -> bool:
        return (
            self.values.shape == other.values.shape
            and self.voxel_mm == other.voxel_mm
            and self.offset_mm == other.offset_mm
        )


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ellipsoid:
    center_mm: tuple[float, float, float]
    semi_axes_mm: tuple[float, float, float]
    value_hu: float

    def contains(self, x, y, z):
        cx, cy, cz = self.center_mm
        a, b, c = self.semi_axes_mm
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0


@dataclass(frozen=True)
class Cylinder:
    """Finite circular cylinder; ``axis`` names the symmetry axis."""

    center_mm: tuple[float, float, float]
    radius_mm: float
    height_mm: float
    value_hu: float
    axis: str = "z"

    def contains(self, x, y, z):
        cx, cy, cz = self.center_mm
        if self.axis == "z":
            radial = (x - cx) ** 2 + (y - cy) ** 2
            axial = np.abs(z - cz)
        elif self.axis == "y":
            radial = (x - cx) ** 2 + (z - cz) ** 2
            axial = np.abs(y - cy)
        elif self.axis == "x":
            radial = (y - cy) ** 2 + (z - cz) ** 2
            axial = np.abs(x - cx)
        else:
            raise VolumeError(f"bad cylinder axis {self.axis!r}")
        return (radial <= self.radius_mm**2) & (axial <= self.height_mm / 2.0)


@dataclass(frozen=True)
class PhantomSpec:
    """Additive composition of primitives over an air (-1000 HU) background."""

    primitives: tuple

    def __post_init__(self):
        if len(self.primitives) == 0:
            raise VolumeError("phantom needs at least one primitive")
        for p in self.primitives:
            if isinstance(p, Ellipsoid):
                if any(s <= 0 for s in p.semi_axes_mm):
                    raise VolumeError("ellipsoid semi-axes must be positive")
            elif isinstance(p, Cylinder):
                if p.radius_mm <= 0 or p.height_mm <= 0:
                    raise VolumeError("cylinder radius and height must be positive")
                if p.axis not in ("x", "y", "z"):
                    raise VolumeError(f"bad cylinder axis {p.axis!r}")
            else:
                raise VolumeError(f"unknown primitive type {type(p).__name__}")

    @staticmethod
    def from_dict(d: dict) -> "PhantomSpec":
        prims = []
        for p in d["primitives"]:
            kind = p["kind"]
            if kind == "ellipsoid":
                prims.append(Ellipsoid(tuple(p["center_mm"]), tuple(p["semi_axes_mm"]), float(p["value_hu"])))
            elif kind == "cylinder":
                prims.append(
                    Cylinder(tuple(p["center_mm"]), float(p["radius_mm"]), float(p["height_mm"]),
                             float(p["value_hu"]), p.get("axis", "z"))
                )
            else:
                raise VolumeError(f"unknown primitive kind {kind!r}")
        return PhantomSpec(tuple(prims))

    def to_dict(self) -> dict:
        out = []
        for p in self.primitives:
            if isinstance(p, Ellipsoid):
                out.append({"kind": "ellipsoid", "center_mm": list(p.center_mm),
                            "semi_axes_mm": list(p.semi_axes_mm), "value_hu": p.value_hu})
            else:
                out.append({"kind": "cylinder", "center_mm": list(p.center_mm), "radius_mm": p.radius_mm,
                            "height_mm": p.height_mm, "value_hu": p.value_hu, "axis": p.axis})
        return {"primitives": out}


def rasterize_phantom(spec: PhantomSpec, dims, voxel_mm, offset_mm=(0.0, 0.0, 0.0), supersample: int = 1) -> Volume3D:
    """Rasterize a phantom onto a grid, in HU.

    With supersample=1 a voxel takes the sum of the primitive values whose
    interior contains its center (plus the -1000 HU air background).  Larger
    values average ``supersample**3`` sub-points per voxel, which converges to
    the per-voxel volume fraction of each primitive.
    """
    _check_grid(dims, voxel_mm)
    if supersample < 1:
        raise VolumeError("supersample must be >= 1")
    nx, ny, nz = (int(d) for d in dims)
    dx, dy, dz = (float(v) for v in voxel_mm)
    ox, oy, oz = (float(v) for v in offset_mm)

    xc = ox + (np.arange(nx) - (nx - 1) / 2.0) * dx
    yc = oy + (np.arange(ny) - (ny - 1) / 2.0) * dy
    zc = oz + (np.arange(nz) - (nz - 1) / 2.0) * dz

    acc = np.zeros((nz, ny, nx), dtype=np.float64)
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    for sz in sub:
        z = (zc + sz * dz)[:, None, None]
        for sy in sub:
            y = (yc + sy * dy)[None, :, None]
            for sx in sub:
                x = (xc + sx * dx)[None, None, :]
                for p in spec.primitives:
                    acc += p.value_hu * p.contains(x, y, z)
    acc /= supersample**3
    return Volume3D(values=(AIR_HU + acc).astype(np.float32), voxel_mm=(dx, dy, dz), unit=UNIT_HU, offset_mm=(ox, oy, oz))


# ---------------------------------------------------------------------------
# Unit conversion and SOI splitting
# ---------------------------------------------------------------------------

def hu_to_mu(vol: Volume3D, mu_water: float = MU_WATER_MM) -> Volume3D:
    """HU -> linear attenuation, mu = mu_water*(1 + HU/1000), clamped at 0."""
    if vol.unit != UNIT_HU:
        raise VolumeError(f"hu_to_mu expects HU input, got {vol.unit!r}")
    mu = np.maximum(mu_water * (1.0 + vol.values.astype(np.float64) / 1000.0), 0.0)
    return Volume3D(values=mu.astype(np.float32), voxel_mm=vol.voxel_mm, unit=UNIT_MU, offset_mm=vol.offset_mm)


def mu_to_hu(vol: Volume3D, mu_water: float = MU_WATER_MM) -> Volume3D:
    """Attenuation -> HU; affine inverse of :func:`hu_to_mu` above the clamp."""
    if vol.unit != UNIT_MU:
        raise VolumeError(f"mu_to_hu expects attenuation input, got {vol.unit!r}")
    hu = 1000.0 * (vol.values.astype(np.float64) / mu_water - 1.0)
    return Volume3D(values=hu.astype(np.float32), voxel_mm=vol.voxel_mm, unit=UNIT_HU, offset_mm=vol.offset_mm)


def split_by_mask(vol: Volume3D, mask: MaskVolume) -> tuple[Volume3D, Volume3D]:
    """Split an attenuation volume into (inside-mask, outside-mask) parts.

    The two parts sum voxelwise to the original volume exactly.
    """
    if vol.unit != UNIT_MU:
        raise VolumeError("split_by_mask operates in the attenuation domain")
    if not vol.same_grid(mask):
        raise VolumeError("volume and mask grids differ")
    soi = np.where(mask.values, vol.values, np.float32(0.0))
    others = np.where(mask.values, np.float32(0.0), vol.values)
    mk = lambda v: Volume3D(values=v, voxel_mm=vol.voxel_mm, unit=UNIT_MU, offset_mm=vol.offset_mm)
    return mk(soi), mk(others)


def threshold_segment(vol: Volume3D, hu_threshold: float) -> MaskVolume:
    """Binary mask of voxels with HU >= threshold."""
    if vol.unit != UNIT_HU:
        raise VolumeError("threshold_segment expects an HU volume")
    return MaskVolume(values=vol.values >= hu_threshold, voxel_mm=vol.voxel_mm, offset_mm=vol.offset_mm)


# ---------------------------------------------------------------------------
# File I/O: raw little-endian float32 payload + JSON sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".json"


def save_volume(vol: Volume3D, path: str) -> None:
    """Write x-fastest raw float32 payload plus {dims, voxel_mm, unit, offset_mm} sidecar."""
    vol.values.astype("<f4").tofile(path)
    meta = {
        "dims": list(vol.dims),
        "voxel_mm": list(vol.voxel_mm),
        "unit": vol.unit,
        "offset_mm": list(vol.offset_mm),
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_volume(path: str) -> Volume3D:
    meta_path = _sidecar_path(path)
    if not os.path.exists(meta_path):
        raise VolumeError(f"missing sidecar {meta_path}")
    with open(meta_path) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise VolumeError(f"corrupt sidecar {meta_path}: {e}") from e
    for key in ("dims", "voxel_mm", "unit"):
        if key not in meta:
            raise VolumeError(f"sidecar {meta_path} missing key {key!r}")
    dims = [int(d) for d in meta["dims"]]
    voxel = [float(v) for v in meta["voxel_mm"]]
    _check_grid(dims, voxel)
    nx, ny, nz = dims
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != nx * ny * nz:
        raise VolumeError(f"payload holds {payload.size} values, expected {nx * ny * nz}")
    values = payload.reshape(nz, ny, nx)
    offset = tuple(float(v) for v in meta.get("offset_mm", (0.0, 0.0, 0.0)))
    if meta["unit"] == UNIT_MASK:
        raise VolumeError("file is a mask; use load_mask")
    return Volume3D(values=values, voxel_mm=tuple(voxel), unit=meta["unit"], offset_mm=offset)


def save_mask(mask: MaskVolume, path: str) -> None:
    """Masks share the volume format with values exactly 0.0/1.0 and unit 'mask'."""
    mask.values.astype("<f4").tofile(path)
    meta = {
        "dims": list(mask.dims),
        "voxel_mm": list(mask.voxel_mm),
        "unit": UNIT_MASK,
        "offset_mm": list(mask.offset_mm),
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_mask(path: str) -> MaskVolume:
    meta_path = _sidecar_path(path)
    if not os.path.exists(meta_path):
        raise VolumeError(f"missing sidecar {meta_path}")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get("unit") != UNIT_MASK:
        raise VolumeError(f"expected a mask file, unit is {meta.get('unit')!r}")
    dims = [int(d) for d in meta["dims"]]
    voxel = [float(v) for v in meta["voxel_mm"]]
    _check_grid(dims, voxel)
    nx, ny, nz = dims
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != nx * ny * nz:
        raise VolumeError(f"payload holds {payload.size} values, expected {nx * ny * nz}")
    if not np.all((payload == 0.0) | (payload == 1.0)):
        raise VolumeError("mask payload contains values other than 0.0/1.0")
    values = payload.reshape(nz, ny, nx) != 0.0
    offset = tuple(float(v) for v in meta.get("offset_mm", (0.0, 0.0, 0.0)))
    return MaskVolume(values=values, voxel_mm=tuple(voxel), offset_mm=offset)
