"""Forward projection (physical and extended virtual detector), the analytic
line-integral oracle, and Poisson noise injection.

Projection values are dimensionless mu*mm line integrals.  The physical stack
of a volume equals the central physical-width window of its virtual stack
bit-exactly, because the shared columns produce identical rays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from truncbct import _kernels
from truncbct.geometry import (
    SystemGeometry,
    build_geometry,
    detector_u_offsets_mm,
    detector_v_offsets_mm,
    view_angles_rad,
)
from truncbct.volumes import MU_WATER_MM, UNIT_MU, Cylinder, Ellipsoid, PhantomSpec, Volume3D

DETECTOR_PHYSICAL = "physical"
DETECTOR_VIRTUAL = "virtual"


class ProjectionError(ValueError):
    """Inconsistent projection data or misuse of an operation."""


@dataclass
class ProjectionStack:
    """Views x rows x cols line-integral data tied to a geometry."""

    values: np.ndarray  # (n_views, n_rows, n_cols) float32
    geometry: SystemGeometry
    detector_kind: str
    noise_applied: bool = False

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ProjectionError("projection values must be (n_views, n_rows, n_cols)")
        if self.detector_kind not in (DETECTOR_PHYSICAL, DETECTOR_VIRTUAL):
            raise ProjectionError(f"unknown detector_kind {self.detector_kind!r}")
        g = self.geometry
        expected = (g.n_views, g.det_rows, g.cols(self.detector_kind == DETECTOR_VIRTUAL))
        if self.values.shape != expected:
            raise ProjectionError(f"stack shape {self.values.shape} does not match geometry {expected}")

    @property
    def n_views(self) -> int:
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[1]

    @property
    def n_cols(self) -> int:
        return self.values.shape[2]


def _volume_origin(vol: Volume3D) -> tuple[float, float, float]:
    nx, ny, nz = vol.dims
    return (
        vol.offset_mm[0] - (nx - 1) / 2.0 * vol.voxel_mm[0],
        vol.offset_mm[1] - (ny - 1) / 2.0 * vol.voxel_mm[1],
        vol.offset_mm[2] - (nz - 1) / 2.0 * vol.voxel_mm[2],
    )


def forward_project(vol: Volume3D, geom: SystemGeometry, detector_kind: str = DETECTOR_PHYSICAL,
                    step_mm: float | None = None) -> ProjectionStack:
    """Sampled line integrals of an attenuation volume along every detector ray.

    Equidistant sampling with trilinear interpolation; default step is half the
    smallest voxel pitch.  The volume is treated as zero outside its grid.
    """
    if vol.unit != UNIT_MU:
        raise ProjectionError(f"forward_project expects attenuation input, got {vol.unit!r}")
    if not np.all(np.isfinite(vol.values)):
        raise ProjectionError("volume contains non-finite values")
    if detector_kind not in (DETECTOR_PHYSICAL, DETECTOR_VIRTUAL):
        raise ProjectionError(f"unknown detector_kind {detector_kind!r}")
    if step_mm is None:
        step_mm = min(vol.voxel_mm) / 2.0
    if step_mm <= 0:
        raise ProjectionError("step_mm must be positive")

    use_virtual = detector_kind == DETECTOR_VIRTUAL
    betas = view_angles_rad(geom)
    n_cols = geom.cols(use_virtual)
    out = np.zeros((geom.n_views, geom.det_rows, n_cols), dtype=np.float32)
    x0, y0, z0 = _volume_origin(vol)
    _kernels.march_rays(
        vol.values,
        vol.voxel_mm[0], vol.voxel_mm[1], vol.voxel_mm[2],
        x0, y0, z0,
        np.cos(betas), np.sin(betas),
        geom.sid_mm, geom.sdd_mm,
        geom.det_rows, n_cols,
        geom.pixel_w_mm, geom.pixel_h_mm,
        float(step_mm),
        out,
    )
    return ProjectionStack(values=out, geometry=geom, detector_kind=detector_kind)


# ---------------------------------------------------------------------------
# Analytic oracle
# ---------------------------------------------------------------------------

def _ray_grid(geom: SystemGeometry, beta: float, use_virtual: bool):
    """Source position and unit directions for every pixel of one view."""
    us = detector_u_offsets_mm(geom, use_virtual)
    vs = detector_v_offsets_mm(geom)
    uu, vv = np.meshgrid(us, vs)
    c, s = np.cos(beta), np.sin(beta)
    src = np.array([geom.sid_mm * c, geom.sid_mm * s, 0.0])
    px = (geom.sid_mm - geom.sdd_mm) * c - uu * s
    py = (geom.sid_mm - geom.sdd_mm) * s + uu * c
    pz = vv
    d = np.stack([px - src[0], py - src[1], pz - src[2]], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return src, d


def _ellipsoid_chords(prim: Ellipsoid, src, dirs):
    axes = np.asarray(prim.semi_axes_mm)
    o = (src - np.asarray(prim.center_mm)) / axes
    d = dirs / axes
    a = np.einsum("...i,...i->...", d, d)
    b = 2.0 * np.einsum("i,...i->...", o, d)
    c = float(np.dot(o, o)) - 1.0
    disc = b * b - 4.0 * a * c
    return np.where(disc > 0.0, np.sqrt(np.maximum(disc, 0.0)) / a, 0.0)


def _cylinder_chords(prim: Cylinder, src, dirs):
    axis_index = {"x": 0, "y": 1, "z": 2}[prim.axis]
    radial = [i for i in range(3) if i != axis_index]
    center = np.asarray(prim.center_mm)
    o = src - center
    # quadratic in the radial plane
    dr = dirs[..., radial]
    orad = o[radial]
    a = np.einsum("...i,...i->...", dr, dr)
    b = 2.0 * np.einsum("i,...i->...", orad, dr)
    c = float(np.dot(orad, orad)) - prim.radius_mm**2
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_in = np.where(a > 0, (-b - sq) / (2 * a), -np.inf)
        t_out = np.where(a > 0, (-b + sq) / (2 * a), np.inf)
    hit_radial = np.where(a > 0, disc > 0, c < 0)
    # axial slab
    da = dirs[..., axis_index]
    oa = o[axis_index]
    half = prim.height_mm / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (-half - oa) / da
        tb = (half - oa) / da
    slab_lo = np.where(np.abs(da) > 1e-15, np.minimum(ta, tb), -np.inf)
    slab_hi = np.where(np.abs(da) > 1e-15, np.maximum(ta, tb), np.inf)
    parallel_miss = (np.abs(da) <= 1e-15) & (np.abs(oa) > half)
    lo = np.maximum(t_in, slab_lo)
    hi = np.minimum(t_out, slab_hi)
    chord = np.maximum(hi - lo, 0.0)
    return np.where(hit_radial & ~parallel_miss, chord, 0.0)


def analytic_project(spec: PhantomSpec, geom: SystemGeometry, detector_kind: str = DETECTOR_PHYSICAL,
                     mu_water: float = MU_WATER_MM) -> ProjectionStack:
    """Exact ray-primitive intersection lengths times primitive attenuation.

    Primitive HU values are additive over air, so primitive attenuation is
    mu_water * value_hu / 1000 and chords superpose with no sampling error.
    """
    if detector_kind not in (DETECTOR_PHYSICAL, DETECTOR_VIRTUAL):
        raise ProjectionError(f"unknown detector_kind {detector_kind!r}")
    use_virtual = detector_kind == DETECTOR_VIRTUAL
    betas = view_angles_rad(geom)
    out = np.zeros((geom.n_views, geom.det_rows, geom.cols(use_virtual)), dtype=np.float64)
    for i, beta in enumerate(betas):
        src, dirs = _ray_grid(geom, beta, use_virtual)
        total = np.zeros(dirs.shape[:2], dtype=np.float64)
        for prim in spec.primitives:
            mu = mu_water * prim.value_hu / 1000.0
            if isinstance(prim, Ellipsoid):
                total += mu * _ellipsoid_chords(prim, src, dirs)
            else:
                total += mu * _cylinder_chords(prim, src, dirs)
        out[i] = total
    return ProjectionStack(values=out.astype(np.float32), geometry=geom, detector_kind=detector_kind)


# ---------------------------------------------------------------------------
# Poisson noise
# ---------------------------------------------------------------------------

_U64 = 0xFFFFFFFFFFFFFFFF
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (wrapping arithmetic)."""
    z = (x + np.uint64(_SM64_GAMMA)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _SM64_M1
    z = (z ^ (z >> np.uint64(27))) * _SM64_M2
    return z ^ (z >> np.uint64(31))


def _pixel_keys(seed: int, n_views: int, n_rows: int, n_cols: int) -> np.ndarray:
    """One independent 64-bit key per (view, row, col), order-free by construction."""
    view = np.arange(n_views, dtype=np.uint64)[:, None, None]
    row = np.arange(n_rows, dtype=np.uint64)[None, :, None]
    col = np.arange(n_cols, dtype=np.uint64)[None, None, :]
    h0 = np.full((1, 1, 1), seed & _U64, dtype=np.uint64)
    h = _splitmix64(_splitmix64(h0) ^ view)
    h = _splitmix64(h ^ (row + np.uint64(0x1000000)))
    h = _splitmix64(h ^ (col + np.uint64(0x2000000000)))
    return np.broadcast_to(h, (n_views, n_rows, n_cols)).copy()


def _uniform(keys: np.ndarray, draw: int) -> np.ndarray:
    """Uniform in (0, 1], drawn as stream index `draw` of each key."""
    bits = _splitmix64(keys + np.uint64((draw * _SM64_GAMMA) & _U64))
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)


_NORMAL_APPROX_MIN_MEAN = 1000.0


def _poisson_counts(lam: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Seeded Poisson draws: Knuth counting below mean 1000, rounded normal above."""
    counts = np.zeros(lam.shape, dtype=np.float64)
    big = lam >= _NORMAL_APPROX_MIN_MEAN
    if np.any(big):
        u1 = _uniform(keys[big], 0)
        u2 = _uniform(keys[big], 1)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        counts[big] = np.maximum(np.floor(lam[big] + np.sqrt(lam[big]) * z + 0.5), 0.0)
    small = ~big
    if np.any(small):
        lam_s = lam[small]
        keys_s = keys[small]
        limit = np.exp(-lam_s)
        prod = np.ones_like(lam_s)
        k = np.zeros_like(lam_s)
        active = prod > limit
        draw = 2
        while np.any(active):
            prod[active] *= _uniform(keys_s[active], draw)
            still = active & (prod > limit)
            k[still] += 1
            active = still
            draw += 1
        counts[small] = k
    return counts


def add_poisson_noise(stack: ProjectionStack, photons_per_ray: float, seed: int) -> ProjectionStack:
    """Transmission Poisson noise: N ~ Poisson(photons * exp(-p)), p' = -ln(max(N,1)/photons).

    Each pixel draws from its own (seed, view, row, col) stream, so the result
    is independent of iteration order and thread count.
    """
    if stack.noise_applied:
        raise ProjectionError("stack already carries noise")
    if photons_per_ray < 1:
        raise ProjectionError("photons_per_ray must be >= 1")
    lam = photons_per_ray * np.exp(-stack.values.astype(np.float64))
    keys = _pixel_keys(int(seed), *stack.values.shape)
    counts = _poisson_counts(lam, keys)
    noisy = -np.log(np.maximum(counts, 1.0) / photons_per_ray)
    return ProjectionStack(values=noisy.astype(np.float32), geometry=stack.geometry,
                           detector_kind=stack.detector_kind, noise_applied=True)


# ---------------------------------------------------------------------------
# File I/O: raw float32 payload, column-fastest, + JSON sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".json"


def save_projections(stack: ProjectionStack, path: str) -> None:
    stack.values.astype("<f4").tofile(path)
    meta = {
        "n_views": stack.n_views,
        "n_rows": stack.n_rows,
        "n_cols": stack.n_cols,
        "detector_kind": stack.detector_kind,
        "noise_applied": stack.noise_applied,
        "geometry": stack.geometry.to_dict(),
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_projections(path: str) -> ProjectionStack:
    meta_path = _sidecar_path(path)
    if not os.path.exists(meta_path):
        raise ProjectionError(f"missing sidecar {meta_path}")
    with open(meta_path) as f:
        meta = json.load(f)
    geom = build_geometry(meta["geometry"])
    shape = (int(meta["n_views"]), int(meta["n_rows"]), int(meta["n_cols"]))
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != shape[0] * shape[1] * shape[2]:
        raise ProjectionError(f"payload holds {payload.size} values, expected {np.prod(shape)}")
    return ProjectionStack(values=payload.reshape(shape), geometry=geom,
                           detector_kind=meta["detector_kind"], noise_applied=bool(meta["noise_applied"]))
