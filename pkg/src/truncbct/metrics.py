"""Quantitative evaluation: Dice overlap, masked RMSE/MAE and pair reports."""

from __future__ import annotations

import numpy as np

from truncbct.volumes import MaskVolume, Volume3D, VolumeError, threshold_segment


def dice(a: MaskVolume, b: MaskVolume) -> float:
    """Dice overlap 2|a&b| / (|a|+|b|); two empty masks count as identical."""
    if not a.same_grid(b):
        raise VolumeError("mask grids differ")
    na = int(a.values.sum())
    nb = int(b.values.sum())
    if na + nb == 0:
        return 1.0
    overlap = int(np.logical_and(a.values, b.values).sum())
    return 2.0 * overlap / (na + nb)


def _check_pair(x: Volume3D, y: Volume3D, m: MaskVolume):
    if not x.same_grid(y) or not x.same_grid(m):
        raise VolumeError("grids differ")
    if x.unit != y.unit:
        raise VolumeError(f"unit mismatch: {x.unit!r} vs {y.unit!r}")
    if not m.values.any():
        raise VolumeError("mask is empty")


def rmse_in_mask(x: Volume3D, y: Volume3D, m: MaskVolume) -> float:
    """Root-mean-square of (x - y) over mask voxels."""
    _check_pair(x, y, m)
    d = (x.values.astype(np.float64) - y.values.astype(np.float64))[m.values]
    return float(np.sqrt(np.mean(d * d)))


def mae_in_mask(x: Volume3D, y: Volume3D, m: MaskVolume) -> float:
    """Mean absolute difference over mask voxels."""
    _check_pair(x, y, m)
    d = (x.values.astype(np.float64) - y.values.astype(np.float64))[m.values]
    return float(np.mean(np.abs(d)))


def evaluate_pair(pred: Volume3D, reference: Volume3D, soi_mask: MaskVolume, fov_mask: MaskVolume,
                  hu_threshold: float = 150.0, restrict_outside_fov: bool = True) -> dict:
    """Report Dice of the thresholded prediction against the SOI mask plus
    RMSE inside/outside the FOV.

    By default the Dice overlap counts only voxels outside the FOV cylinder
    (inside it the data are measured, the interesting recovery is outside);
    pass restrict_outside_fov=False for a full-volume Dice.
    """
    if not pred.same_grid(reference) or not pred.same_grid(soi_mask) or not pred.same_grid(fov_mask):
        raise VolumeError("grids differ")
    pred_seg = threshold_segment(pred, hu_threshold)
    if restrict_outside_fov:
        outside = ~fov_mask.values
        seg_a = MaskVolume(pred_seg.values & outside, pred.voxel_mm, pred.offset_mm)
        seg_b = MaskVolume(soi_mask.values & outside, pred.voxel_mm, pred.offset_mm)
    else:
        seg_a, seg_b = pred_seg, soi_mask
    inv_fov = MaskVolume(~fov_mask.values, pred.voxel_mm, pred.offset_mm)
    return {
        "dice": dice(seg_a, seg_b),
        "rmse_in_fov_hu": rmse_in_mask(pred, reference, fov_mask),
        "rmse_out_fov_hu": rmse_in_mask(pred, reference, inv_fov),
        "threshold_hu": float(hu_threshold),
        "dice_outside_fov_only": bool(restrict_outside_fov),
        "n_soi_voxels": int(seg_b.values.sum()),
        "n_pred_voxels": int(seg_a.values.sum()),
    }
