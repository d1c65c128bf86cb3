"""Cone-beam CT simulation and truncated-data reconstruction toolkit.

Simulates paired truncated/untruncated cone-beam projections of a volume,
reconstructs with water-cylinder-extrapolated short-scan FDK, and synthesizes
conventional and task-specific training pairs in which only the structures of
interest differ between input and label.
"""

from truncbct.geometry import SystemGeometry, Ray, build_geometry, view_angles, fov_radius_mm, ray_for_pixel
from truncbct.volumes import (
    Volume3D,
    MaskVolume,
    PhantomSpec,
    Ellipsoid,
    Cylinder,
    MU_WATER_MM,
    load_volume,
    save_volume,
    load_mask,
    save_mask,
    hu_to_mu,
    mu_to_hu,
    rasterize_phantom,
    split_by_mask,
    threshold_segment,
)
from truncbct.projector import ProjectionStack, forward_project, analytic_project, add_poisson_noise, load_projections, save_projections
from truncbct.completion import wce_extrapolate, zero_extend
from truncbct.fdk import ReconOptions, cosine_weight, redundancy_weights, ramp_filter, backproject, reconstruct, reconstruct_mu
from truncbct.dataprep import TrainingPair, DatasetManifest, prepare_conventional, prepare_task_specific, export_slices, fov_cylinder_mask
from truncbct.metrics import dice, rmse_in_mask, mae_in_mask, evaluate_pair

__version__ = "0.1.0"
