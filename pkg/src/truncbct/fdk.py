"""Short-scan FDK reconstruction: cosine weighting, redundancy (Parker)
weighting, ramp filtering and voxel-driven backprojection.

The chain reproduces absolute attenuation: for projections p of an object f,
backprojecting dbeta * sum_views parker * (sid^2/U^2) * [du_iso * (cw(p) (*) h)]
returns mu values, where du_iso is the column pitch rescaled to the isocenter
plane and h the discrete ramp kernel on that pitch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from truncbct import _kernels
from truncbct.completion import wce_extrapolate, zero_extend
from truncbct.geometry import (
    SystemGeometry,
    detector_u_offsets_mm,
    detector_v_offsets_mm,
    view_angles_rad,
)
from truncbct.projector import DETECTOR_PHYSICAL, DETECTOR_VIRTUAL, ProjectionError, ProjectionStack
from truncbct.volumes import MU_WATER_MM, UNIT_MU, Volume3D, mu_to_hu

EXTRAPOLATION_MODES = ("wce", "zero", "none")
FILTER_KINDS = ("ram-lak", "shepp-logan")
REDUNDANCY_MODES = ("parker", "uniform")
FAN_POLICIES = ("physical", "virtual")


class ReconError(ValueError):
    """Invalid reconstruction options or inconsistent inputs."""


@dataclass
class ReconOptions:
    """Options for the reconstruction operator."""

    extrapolation: str = "wce"
    filter_kind: str = "ram-lak"
    redundancy: str = "parker"
    grid_dims: tuple[int, int, int] = (128, 128, 128)
    grid_voxel_mm: tuple[float, float, float] = (2.5, 2.5, 2.5)
    grid_offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mu_water: float = MU_WATER_MM
    parker_fan: str = "physical"
    interpolation: str = "bilinear"  # nearest is for debugging only

    def __post_init__(self):
        if self.extrapolation not in EXTRAPOLATION_MODES:
            raise ReconError(f"extrapolation must be one of {EXTRAPOLATION_MODES}")
        if self.filter_kind not in FILTER_KINDS:
            raise ReconError(f"filter_kind must be one of {FILTER_KINDS}")
        if self.redundancy not in REDUNDANCY_MODES:
            raise ReconError(f"redundancy must be one of {REDUNDANCY_MODES}")
        if self.parker_fan not in FAN_POLICIES:
            raise ReconError(f"parker_fan must be one of {FAN_POLICIES}")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ReconError("interpolation must be 'bilinear' or 'nearest'")
        if any(int(d) <= 0 for d in self.grid_dims) or any(float(v) <= 0 for v in self.grid_voxel_mm):
            raise ReconError("reconstruction grid must have positive dims and voxel size")

    def to_dict(self) -> dict:
        return {
            "extrapolation": self.extrapolation,
            "filter_kind": self.filter_kind,
            "redundancy": self.redundancy,
            "grid_dims": list(self.grid_dims),
            "grid_voxel_mm": list(self.grid_voxel_mm),
            "grid_offset_mm": list(self.grid_offset_mm),
            "mu_water": self.mu_water,
            "parker_fan": self.parker_fan,
            "interpolation": self.interpolation,
        }

    @staticmethod
    def from_dict(d: dict) -> "ReconOptions":
        kw = {}
        for key in ("extrapolation", "filter_kind", "redundancy", "mu_water", "parker_fan", "interpolation"):
            if key in d:
                kw[key] = d[key]
        if "grid_dims" in d:
            kw["grid_dims"] = tuple(int(v) for v in d["grid_dims"])
        if "grid_voxel_mm" in d:
            kw["grid_voxel_mm"] = tuple(float(v) for v in d["grid_voxel_mm"])
        if "grid_offset_mm" in d:
            kw["grid_offset_mm"] = tuple(float(v) for v in d["grid_offset_mm"])
        return ReconOptions(**kw)


# ---------------------------------------------------------------------------
# Weighting
# ---------------------------------------------------------------------------

def cosine_weight(stack: ProjectionStack, geom: SystemGeometry) -> ProjectionStack:
    """Scale each pixel by sdd / sqrt(sdd^2 + u^2 + v^2)."""
    use_virtual = stack.detector_kind == DETECTOR_VIRTUAL
    us = detector_u_offsets_mm(geom, use_virtual)
    vs = detector_v_offsets_mm(geom)
    uu, vv = np.meshgrid(us, vs)
    w = geom.sdd_mm / np.sqrt(geom.sdd_mm**2 + uu**2 + vv**2)
    return ProjectionStack(values=(stack.values * w[None, :, :].astype(np.float32)),
                           geometry=geom, detector_kind=stack.detector_kind,
                           noise_applied=stack.noise_applied)


def parker_weight(theta_rad, gamma_rad, range_rad: float):
    """Parker weight for view angle theta (from scan start) and fan angle gamma.

    Defined for short scans of range pi + 2*Gamma with Gamma = (range - pi)/2.
    A ray (theta, gamma) is measured again at (theta + pi - 2*gamma, -gamma);
    whenever both views lie inside the scan the two weights sum to one.
    """
    big_gamma = (range_rad - math.pi) / 2.0
    theta = np.asarray(theta_rad, dtype=np.float64)
    gamma = np.asarray(gamma_rad, dtype=np.float64)
    # keep the ramp denominators positive; |gamma| is clamped by the caller
    gamma = np.clip(gamma, -big_gamma + 1e-12, big_gamma - 1e-12)
    w = np.ones(np.broadcast_shapes(theta.shape, gamma.shape), dtype=np.float64)
    theta, gamma = np.broadcast_arrays(theta, gamma)
    up = theta < 2.0 * (big_gamma + gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_up = np.sin(np.pi / 4.0 * theta / (big_gamma + gamma)) ** 2
        w_down = np.sin(np.pi / 4.0 * (range_rad - theta) / (big_gamma - gamma)) ** 2
    down = theta > math.pi + 2.0 * gamma
    w = np.where(up, w_up, w)
    w = np.where(down, w_down, w)
    return np.clip(w, 0.0, 1.0)


def redundancy_weights(geom: SystemGeometry, detector_kind: str = DETECTOR_VIRTUAL,
                       mode: str = "parker", fan_policy: str = "physical") -> np.ndarray:
    """Per-(view, column) short-scan redundancy weights in [0, 1].

    Parker weights use the fan angle of the ``fan_policy`` detector; columns
    beyond that fan inherit the boundary weight of the nearest in-fan column
    (extrapolated data is synthetic, measured data defines redundancy).
    """
    if mode not in REDUNDANCY_MODES:
        raise ReconError(f"unknown redundancy mode {mode!r}")
    use_virtual = detector_kind == DETECTOR_VIRTUAL
    n_cols = geom.cols(use_virtual)
    range_rad = math.radians(geom.angular_range_deg)
    if mode == "uniform":
        return np.full((geom.n_views, n_cols), math.pi / range_rad, dtype=np.float64)

    fan = geom.half_fan_rad(fan_policy == "virtual")
    if range_rad < math.pi + 2.0 * fan - 1e-12:
        raise ReconError(
            f"angular range {geom.angular_range_deg} deg is below the short-scan minimum "
            f"180 deg + {fan_policy} fan ({math.degrees(math.pi + 2 * fan):.2f} deg)"
        )
    gammas = np.arctan(detector_u_offsets_mm(geom, use_virtual) / geom.sdd_mm)
    gammas = np.clip(gammas, -fan, fan)
    thetas = view_angles_rad(geom) - math.radians(geom.start_angle_deg)
    return parker_weight(thetas[:, None], gammas[None, :], range_rad)


# ---------------------------------------------------------------------------
# Ramp filtering
# ---------------------------------------------------------------------------

def ramp_kernel_taps(n_cols: int, du: float, filter_kind: str = "ram-lak") -> np.ndarray:
    """Spatial taps h(n) for n = -(n_cols-1) .. n_cols-1 on pitch du."""
    n = np.arange(-(n_cols - 1), n_cols)
    if filter_kind == "ram-lak":
        taps = np.zeros(n.shape, dtype=np.float64)
        taps[n == 0] = 1.0 / (4.0 * du * du)
        odd = (n % 2) != 0
        taps[odd] = -1.0 / (np.pi * n[odd] * du) ** 2
    elif filter_kind == "shepp-logan":
        taps = -2.0 / (np.pi**2 * du**2 * (4.0 * n.astype(np.float64) ** 2 - 1.0))
    else:
        raise ReconError(f"unknown filter kind {filter_kind!r}")
    return taps


def ramp_filter(stack: ProjectionStack, filter_kind: str = "ram-lak") -> ProjectionStack:
    """Per (view, row) discrete convolution along columns with the ramp kernel.

    Realized by zero-padded FFT of length >= 2*n_cols rounded up to a power of
    two, so the result equals the linear convolution restricted to the
    measured columns.  The kernel pitch is the column pitch at the isocenter
    plane.
    """
    geom = stack.geometry
    du = geom.pixel_w_mm * geom.sid_mm / geom.sdd_mm
    n_cols = stack.n_cols
    taps = ramp_kernel_taps(n_cols, du, filter_kind)
    length = 1
    while length < 2 * n_cols:
        length *= 2
    kernel = np.zeros(length, dtype=np.float64)
    offsets = np.arange(-(n_cols - 1), n_cols)
    kernel[offsets % length] = taps
    kernel_f = np.fft.rfft(kernel)

    padded = np.zeros((stack.n_views, stack.n_rows, length), dtype=np.float64)
    padded[:, :, :n_cols] = stack.values
    filtered = np.fft.irfft(np.fft.rfft(padded, axis=2) * kernel_f[None, None, :], n=length, axis=2)
    return ProjectionStack(values=filtered[:, :, :n_cols].astype(np.float32),
                           geometry=geom, detector_kind=stack.detector_kind,
                           noise_applied=stack.noise_applied)


# ---------------------------------------------------------------------------
# Backprojection and the full operator
# ---------------------------------------------------------------------------

def backproject(stack: ProjectionStack, geom: SystemGeometry, opts: ReconOptions) -> Volume3D:
    """Voxel value = dbeta * sum over views of (sid^2/U^2) * detector sample."""
    if stack.geometry != geom:
        raise ReconError("stack geometry does not match the given geometry")
    nx, ny, nz = (int(d) for d in opts.grid_dims)
    dx, dy, dz = (float(v) for v in opts.grid_voxel_mm)
    ox, oy, oz = (float(v) for v in opts.grid_offset_mm)
    betas = view_angles_rad(geom)
    out = np.zeros((nz, ny, nx), dtype=np.float32)
    _kernels.backproject_views(
        stack.values,
        np.cos(betas), np.sin(betas),
        geom.sid_mm, geom.sdd_mm,
        geom.pixel_w_mm, geom.pixel_h_mm,
        dx, dy, dz,
        ox - (nx - 1) / 2.0 * dx, oy - (ny - 1) / 2.0 * dy, oz - (nz - 1) / 2.0 * dz,
        nx, ny, nz,
        opts.interpolation == "nearest",
        out,
    )
    out = out * np.float32(math.radians(geom.angular_step_deg))
    return Volume3D(values=out, voxel_mm=(dx, dy, dz), unit=UNIT_MU,
                    offset_mm=(ox, oy, oz))


def reconstruct_mu(stack: ProjectionStack, geom: SystemGeometry, opts: ReconOptions) -> Volume3D:
    """FDK reconstruction to attenuation: extrapolate (physical input only),
    cosine weight, redundancy weight, ramp filter, backproject."""
    if stack.detector_kind == DETECTOR_PHYSICAL:
        if opts.extrapolation == "wce":
            stack = wce_extrapolate(stack, geom, mu_water=opts.mu_water)
        elif opts.extrapolation == "zero":
            stack = zero_extend(stack, geom)
        else:
            raise ReconError("extrapolation 'none' is only valid for virtual-detector input")
    weighted = cosine_weight(stack, geom)
    redundancy = redundancy_weights(geom, stack.detector_kind, opts.redundancy, opts.parker_fan)
    weighted = ProjectionStack(values=weighted.values * redundancy[:, None, :].astype(np.float32),
                               geometry=geom, detector_kind=stack.detector_kind,
                               noise_applied=stack.noise_applied)
    filtered = ramp_filter(weighted, opts.filter_kind)
    du_iso = geom.pixel_w_mm * geom.sid_mm / geom.sdd_mm
    filtered = ProjectionStack(values=filtered.values * np.float32(du_iso),
                               geometry=geom, detector_kind=stack.detector_kind,
                               noise_applied=stack.noise_applied)
    return backproject(filtered, geom, opts)


def reconstruct(stack: ProjectionStack, geom: SystemGeometry, opts: ReconOptions) -> Volume3D:
    """Full reconstruction operator, output in HU."""
    return mu_to_hu(reconstruct_mu(stack, geom, opts), mu_water=opts.mu_water)
