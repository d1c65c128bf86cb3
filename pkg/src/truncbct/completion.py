"""Sinogram completion onto the extended virtual detector.

Water-cylinder extrapolation fits, per row and per lateral boundary, a water
cylinder whose parallel-projection profile reproduces the boundary value and
slope, and continues that profile outward until it reaches zero or the virtual
edge.  A zero-padding baseline is provided for comparison; both operators copy
the measured columns bit-exactly.
"""

from __future__ import annotations

import numpy as np

from truncbct.geometry import SystemGeometry
from truncbct.projector import DETECTOR_PHYSICAL, DETECTOR_VIRTUAL, ProjectionError, ProjectionStack
from truncbct.volumes import MU_WATER_MM


def _check_physical(stack: ProjectionStack, geom: SystemGeometry) -> None:
    if stack.detector_kind != DETECTOR_PHYSICAL:
        raise ProjectionError(f"expected a physical-detector stack, got {stack.detector_kind!r}")
    if stack.geometry != geom:
        raise ProjectionError("stack geometry does not match the given geometry")


def zero_extend(stack: ProjectionStack, geom: SystemGeometry) -> ProjectionStack:
    """Pad the physical stack to virtual width with zeros (exact linear operator)."""
    _check_physical(stack, geom)
    margin = (geom.virt_cols - geom.det_cols) // 2
    out = np.zeros((stack.n_views, stack.n_rows, geom.virt_cols), dtype=np.float32)
    out[:, :, margin:margin + geom.det_cols] = stack.values
    return ProjectionStack(values=out, geometry=geom, detector_kind=DETECTOR_VIRTUAL,
                           noise_applied=stack.noise_applied)


def _cylinder_tail(p_b: np.ndarray, slope: np.ndarray, mu: float, n_ext: int, du: float,
                   fallback_width: int) -> np.ndarray:
    """Decay profiles for one boundary of every row: (n_rows, n_ext).

    p_b is the boundary value (clamped >= 0), slope its outward derivative
    (d/du in the decay direction, so a well-posed fit has slope <= 0).  Column
    k = 0 repeats the boundary value; k >= 1 follows the fitted model.
    """
    n_rows = p_b.shape[0]
    out = np.zeros((n_rows, n_ext), dtype=np.float64)
    if n_ext == 0:
        return out
    positive = p_b > 0.0
    well_posed = positive & (slope <= 0.0)

    # water-cylinder branch: boundary at distance d from the cylinder center,
    # p(u) = 2*mu*sqrt(R^2 - u^2) with p(d) = p_b and p'(d) = slope
    d = np.where(well_posed, -p_b * slope / (4.0 * mu * mu), 0.0)
    r_sq = d * d + (p_b / (2.0 * mu)) ** 2
    k = np.arange(n_ext, dtype=np.float64)[None, :]
    u = d[:, None] + k * du
    cyl = 2.0 * mu * np.sqrt(np.maximum(r_sq[:, None] - u * u, 0.0))
    out = np.where(well_posed[:, None], cyl, out)

    # fallback: raised cosine from p_b to zero over fallback_width columns
    ill = positive & ~well_posed
    if np.any(ill):
        phase = np.minimum(k / fallback_width, 1.0)
        cosine = p_b[:, None] * 0.5 * (1.0 + np.cos(np.pi * phase))
        out = np.where(ill[:, None], cosine, out)
    return out


def wce_extrapolate(stack: ProjectionStack, geom: SystemGeometry, mu_water: float = MU_WATER_MM,
                    fallback_width_cols: int = 100) -> ProjectionStack:
    """Water-cylinder extrapolation of a physical stack onto the virtual detector.

    Boundary slope comes from a 3-point one-sided finite difference.  If the
    implied cylinder is ill-posed (slope pointing inward), the row falls back
    to a raised-cosine decay over ``fallback_width_cols`` columns.  Negative
    boundary values (possible with noise) are clamped to zero for fitting only.
    """
    _check_physical(stack, geom)
    if geom.det_cols < 3:
        raise ProjectionError("WCE needs at least 3 physical columns for the slope estimate")
    margin = (geom.virt_cols - geom.det_cols) // 2
    nc = geom.det_cols
    du = geom.pixel_w_mm * geom.sid_mm / geom.sdd_mm  # column pitch at the isocenter plane

    out = np.zeros((stack.n_views, stack.n_rows, geom.virt_cols), dtype=np.float32)
    out[:, :, margin:margin + nc] = stack.values

    vals = stack.values.astype(np.float64)
    for iv in range(stack.n_views):
        rows = vals[iv]
        # right boundary: backward 3-point derivative, decay toward +u
        p_b = np.maximum(rows[:, nc - 1], 0.0)
        slope = (3.0 * rows[:, nc - 1] - 4.0 * rows[:, nc - 2] + rows[:, nc - 3]) / (2.0 * du)
        tail = _cylinder_tail(p_b, slope, mu_water, margin, du, fallback_width_cols)
        out[iv, :, margin + nc:] = tail.astype(np.float32)
        # left boundary: forward 3-point derivative; mirror so decay is toward -u
        p_b = np.maximum(rows[:, 0], 0.0)
        slope = (-3.0 * rows[:, 0] + 4.0 * rows[:, 1] - rows[:, 2]) / (2.0 * du)
        tail = _cylinder_tail(p_b, -slope, mu_water, margin, du, fallback_width_cols)
        out[iv, :, :margin] = tail[:, ::-1].astype(np.float32)

    return ProjectionStack(values=out, geometry=geom, detector_kind=DETECTOR_VIRTUAL,
                           noise_applied=stack.noise_applied)
