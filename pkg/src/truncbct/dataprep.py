"""Training-pair synthesis and paired-slice export.

Conventional pairs reconstruct the input from truncated projections and the
label from untruncated ones.  Task-specific pairs replace only the structures
of interest (SOI) with their untruncated reconstruction:

    input = R(A_tp . f)
    label = R(A_tp . f_others) + R(A_utp . f_soi)

with the label terms summed in the attenuation domain before the single HU
conversion.  Noise, when enabled, is applied to the input's composite
truncated projections only; labels are always built from noiseless component
projections.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from truncbct.fdk import ReconOptions, reconstruct, reconstruct_mu
from truncbct.geometry import SystemGeometry, fov_radius_mm
from truncbct.projector import DETECTOR_PHYSICAL, DETECTOR_VIRTUAL, add_poisson_noise, forward_project
from truncbct.volumes import (
    MaskVolume,
    Volume3D,
    VolumeError,
    hu_to_mu,
    mu_to_hu,
    split_by_mask,
)

MODE_CONVENTIONAL = "conventional"
MODE_TASK_SPECIFIC = "task-specific"

AXES = ("axial", "coronal", "sagittal")


class DataPrepError(ValueError):
    pass


@dataclass
class TrainingPair:
    input: Volume3D   # HU
    label: Volume3D   # HU
    mode: str
    provenance: dict


@dataclass
class DatasetManifest:
    pairs: list          # entries: {pair_id, slice_index, axis, input_path, label_path, mode}
    grid: dict
    geometry: dict
    mu_water: float
    seed: int | None = None
    slice_shape: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "grid": self.grid,
            "geometry": self.geometry,
            "mu_water": self.mu_water,
            "seed": self.seed,
            "slice_shape": list(self.slice_shape),
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetManifest":
        return DatasetManifest(
            pairs=d["pairs"],
            grid=d["grid"],
            geometry=d["geometry"],
            mu_water=float(d["mu_water"]),
            seed=d.get("seed"),
            slice_shape=tuple(d.get("slice_shape", (0, 0))),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(path: str) -> "DatasetManifest":
        with open(path) as f:
            return DatasetManifest.from_dict(json.load(f))


def geometry_hash(geom: SystemGeometry) -> str:
    blob = json.dumps(geom.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(volume_id, geom, opts, noise_photons, noise_seed) -> dict:
    return {
        "volume_id": volume_id,
        "seed": noise_seed,
        "noise_photons": noise_photons,
        "geometry_hash": geometry_hash(geom),
        "options": opts.to_dict(),
    }


def _prepare_input(f_mu: Volume3D, geom, opts, noise_photons, noise_seed):
    """Truncated-acquisition reconstruction shared by both preparation modes."""
    p_phys = forward_project(f_mu, geom, DETECTOR_PHYSICAL)
    if noise_photons is not None:
        if noise_seed is None:
            raise DataPrepError("noise_seed is required when noise is enabled")
        p_phys = add_poisson_noise(p_phys, noise_photons, noise_seed)
    return reconstruct(p_phys, geom, opts)


def prepare_conventional(f: Volume3D, geom: SystemGeometry, opts: ReconOptions,
                         noise_photons: float | None = None, noise_seed: int | None = None,
                         volume_id: str = "vol0") -> TrainingPair:
    """input = R(A_tp . f) (optionally noisy), label = R(A_utp . f) noiseless."""
    f_mu = hu_to_mu(f, opts.mu_water)
    inp = _prepare_input(f_mu, geom, opts, noise_photons, noise_seed)
    p_virt = forward_project(f_mu, geom, DETECTOR_VIRTUAL)
    label = reconstruct(p_virt, geom, opts)
    return TrainingPair(input=inp, label=label, mode=MODE_CONVENTIONAL,
                        provenance=_provenance(volume_id, geom, opts, noise_photons, noise_seed))


def prepare_task_specific(f: Volume3D, soi_mask: MaskVolume, geom: SystemGeometry, opts: ReconOptions,
                          noise_photons: float | None = None, noise_seed: int | None = None,
                          volume_id: str = "vol0") -> TrainingPair:
    """Label reconstructs only the SOI from untruncated data; the input is
    identical to the conventional preparation."""
    if not f.same_grid(soi_mask):
        raise DataPrepError("volume and SOI mask grids differ")
    f_mu = hu_to_mu(f, opts.mu_water)
    inp = _prepare_input(f_mu, geom, opts, noise_photons, noise_seed)
    f_soi, f_others = split_by_mask(f_mu, soi_mask)
    label_mu = reconstruct_mu(forward_project(f_others, geom, DETECTOR_PHYSICAL), geom, opts)
    soi_mu = reconstruct_mu(forward_project(f_soi, geom, DETECTOR_VIRTUAL), geom, opts)
    label_mu.values = label_mu.values + soi_mu.values
    label = mu_to_hu(label_mu, opts.mu_water)
    return TrainingPair(input=inp, label=label, mode=MODE_TASK_SPECIFIC,
                        provenance=_provenance(volume_id, geom, opts, noise_photons, noise_seed))


# ---------------------------------------------------------------------------
# Slice export
# ---------------------------------------------------------------------------

def _take_slice(values: np.ndarray, axis: str, index: int) -> np.ndarray:
    if axis == "axial":
        return values[index, :, :]
    if axis == "coronal":
        return values[:, index, :]
    return values[:, :, index]


def _axis_len(dims, axis: str) -> int:
    nx, ny, nz = dims
    return {"axial": nz, "coronal": ny, "sagittal": nx}[axis]


def export_slices(pairs: list[TrainingPair], axis: str, slice_range, out_dir: str,
                  geom: SystemGeometry | None = None, seed: int | None = None) -> DatasetManifest:
    """Write the selected slices of every pair as raw float32 images plus one
    JSON manifest (out_dir/manifest.json).  Paths in the manifest are relative
    to out_dir; naming is pair{P}_slice{S}_{input|label}.raw."""
    if not pairs:
        raise DataPrepError("no pairs to export")
    if axis not in AXES:
        raise DataPrepError(f"axis must be one of {AXES}")
    indices = list(slice_range)
    if not indices:
        raise DataPrepError("empty slice range")
    os.makedirs(out_dir, exist_ok=True)

    first = pairs[0].input
    for pair in pairs:
        if not pair.input.same_grid(pair.label) or not pair.input.same_grid(first):
            raise DataPrepError("all pairs must share one grid")
        limit = _axis_len(pair.input.dims, axis)
        for s in indices:
            if not (0 <= s < limit):
                raise DataPrepError(f"slice index {s} outside [0, {limit})")

    entries = []
    slice_shape = None
    for pid, pair in enumerate(pairs):
        for s in indices:
            names = {}
            for role, vol in (("input", pair.input), ("label", pair.label)):
                sl = np.ascontiguousarray(_take_slice(vol.values, axis, s), dtype="<f4")
                name = f"pair{pid}_slice{s}_{role}.raw"
                sl.tofile(os.path.join(out_dir, name))
                names[role] = name
                slice_shape = sl.shape
            entries.append({
                "pair_id": pid,
                "slice_index": s,
                "axis": axis,
                "input_path": names["input"],
                "label_path": names["label"],
                "mode": pair.mode,
            })

    g = pairs[0].provenance.get("geometry_hash") if geom is None else None
    manifest = DatasetManifest(
        pairs=entries,
        grid={"dims": list(first.dims), "voxel_mm": list(first.voxel_mm),
              "offset_mm": list(first.offset_mm)},
        geometry=geom.to_dict() if geom is not None else {"geometry_hash": g},
        mu_water=float(pairs[0].provenance.get("options", {}).get("mu_water", 0.0193)),
        seed=seed,
        slice_shape=tuple(int(v) for v in slice_shape),
    )
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def fov_cylinder_mask(dims, voxel_mm, geom: SystemGeometry, offset_mm=(0.0, 0.0, 0.0)) -> MaskVolume:
    """1 where the voxel center's axial radius is within the physical FOV."""
    nx, ny, nz = (int(d) for d in dims)
    dx, dy, dz = (float(v) for v in voxel_mm)
    x = offset_mm[0] + (np.arange(nx) - (nx - 1) / 2.0) * dx
    y = offset_mm[1] + (np.arange(ny) - (ny - 1) / 2.0) * dy
    rr = x[None, :] ** 2 + y[:, None] ** 2
    inside = rr <= fov_radius_mm(geom, use_virtual=False) ** 2
    values = np.broadcast_to(inside[None, :, :], (nz, ny, nx)).copy()
    return MaskVolume(values=values, voxel_mm=(dx, dy, dz), offset_mm=tuple(float(v) for v in offset_mm))
