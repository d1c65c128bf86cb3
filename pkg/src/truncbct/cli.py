"""Batch pipeline driver.

Single JSON config with sections {geometry, phantom, noise, recon, dataprep,
metrics}; every stage reads and writes fixed artifact names inside the output
directory, so stages can be run one by one or via the one-shot ``pipeline``
subcommand.  A JSON-lines run log records parameters, seeds and output
checksums for every stage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from truncbct import __version__
from truncbct.completion import wce_extrapolate, zero_extend
from truncbct.dataprep import (
    MODE_CONVENTIONAL,
    MODE_TASK_SPECIFIC,
    DataPrepError,
    TrainingPair,
    export_slices,
    fov_cylinder_mask,
    prepare_conventional,
    prepare_task_specific,
)
from truncbct.fdk import ReconOptions, reconstruct
from truncbct.geometry import GeometryError, build_geometry
from truncbct.metrics import evaluate_pair
from truncbct.projector import (
    DETECTOR_PHYSICAL,
    DETECTOR_VIRTUAL,
    ProjectionError,
    add_poisson_noise,
    forward_project,
    load_projections,
    save_projections,
)
from truncbct.volumes import (
    PhantomSpec,
    VolumeError,
    hu_to_mu,
    load_mask,
    load_volume,
    rasterize_phantom,
    save_mask,
    save_volume,
    threshold_segment,
)

STAGES = ("phantom", "project", "noise", "extrapolate", "reconstruct", "prepare", "export", "evaluate", "pipeline")


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply --set dot-path overrides; values parse as JSON, else raw strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value
    return config


def require_section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"config is missing the {name!r} section")
    return config[name]


def _grid_of(section: dict) -> tuple:
    grid = section.get("grid")
    if not grid or "dims" not in grid or "voxel_mm" not in grid:
        raise ConfigError("grid must define 'dims' and 'voxel_mm'")
    dims = tuple(int(v) for v in grid["dims"])
    voxel = tuple(float(v) for v in grid["voxel_mm"])
    offset = tuple(float(v) for v in grid.get("offset_mm", (0.0, 0.0, 0.0)))
    return dims, voxel, offset


def _noise_params(config: dict, seed_override: int | None):
    noise = config.get("noise", {})
    enabled = bool(noise.get("enabled", False))
    photons = noise.get("photons_per_ray")
    seed = seed_override if seed_override is not None else noise.get("seed")
    if enabled and photons is None:
        raise ConfigError("noise.enabled requires noise.photons_per_ray")
    if enabled and seed is None:
        raise ConfigError("noise.enabled requires a seed (noise.seed or --seed)")
    return (float(photons), int(seed)) if enabled else (None, None)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunLog:
    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, "run_log.jsonl")

    def record(self, stage: str, config: dict, seed, outputs: list[str], out_dir: str) -> None:
        entry = {
            "stage": stage,
            "version": __version__,
            "params_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16],
            "seed": seed,
            "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(outputs)},
        }
        with open(self.path, "a") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _paths(out_dir: str) -> dict:
    return {
        "volume": os.path.join(out_dir, "volume.raw"),
        "soi_mask": os.path.join(out_dir, "soi_mask.raw"),
        "proj_physical": os.path.join(out_dir, "proj_physical.raw"),
        "proj_virtual": os.path.join(out_dir, "proj_virtual.raw"),
        "proj_noisy": os.path.join(out_dir, "proj_noisy.raw"),
        "proj_extrapolated": os.path.join(out_dir, "proj_extrapolated.raw"),
        "recon": os.path.join(out_dir, "recon.raw"),
        "slices": os.path.join(out_dir, "slices"),
    }


def _with_sidecars(paths: list[str]) -> list[str]:
    out = []
    for p in paths:
        out.append(p)
        side = os.path.splitext(p)[0] + ".json"
        if os.path.exists(side):
            out.append(side)
    return out


def stage_phantom(config, out_dir, log, seed_override):
    section = require_section(config, "phantom")
    spec = PhantomSpec.from_dict(section)
    dims, voxel, offset = _grid_of(section)
    vol = rasterize_phantom(spec, dims, voxel, offset, supersample=int(section.get("supersample", 1)))
    paths = _paths(out_dir)
    save_volume(vol, paths["volume"])
    threshold = float(config.get("dataprep", {}).get("soi_threshold_hu", 150.0))
    mask = threshold_segment(vol, threshold)
    save_mask(mask, paths["soi_mask"])
    log.record("phantom", config, None, _with_sidecars([paths["volume"], paths["soi_mask"]]), out_dir)


def stage_project(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    paths = _paths(out_dir)
    recon_cfg = config.get("recon", {})
    mu_water = float(recon_cfg.get("mu_water", 0.0193))
    vol = hu_to_mu(load_volume(paths["volume"]), mu_water)
    outputs = []
    for kind, path in ((DETECTOR_PHYSICAL, paths["proj_physical"]), (DETECTOR_VIRTUAL, paths["proj_virtual"])):
        stack = forward_project(vol, geom, kind)
        save_projections(stack, path)
        outputs.append(path)
    log.record("project", config, None, _with_sidecars(outputs), out_dir)


def stage_noise(config, out_dir, log, seed_override):
    photons, seed = _noise_params(config, seed_override)
    if photons is None:
        raise ConfigError("noise stage requires noise.enabled = true")
    paths = _paths(out_dir)
    stack = load_projections(paths["proj_physical"])
    noisy = add_poisson_noise(stack, photons, seed)
    save_projections(noisy, paths["proj_noisy"])
    log.record("noise", config, seed, _with_sidecars([paths["proj_noisy"]]), out_dir)


def stage_extrapolate(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    opts = ReconOptions.from_dict(config.get("recon", {}))
    paths = _paths(out_dir)
    source = paths["proj_noisy"] if os.path.exists(paths["proj_noisy"]) else paths["proj_physical"]
    stack = load_projections(source)
    if opts.extrapolation == "zero":
        ext = zero_extend(stack, geom)
    else:
        ext = wce_extrapolate(stack, geom, mu_water=opts.mu_water)
    save_projections(ext, paths["proj_extrapolated"])
    log.record("extrapolate", config, None, _with_sidecars([paths["proj_extrapolated"]]), out_dir)


def stage_reconstruct(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    opts = ReconOptions.from_dict(require_section(config, "recon"))
    paths = _paths(out_dir)
    for name in ("proj_extrapolated", "proj_noisy", "proj_physical"):
        if os.path.exists(paths[name]):
            stack = load_projections(paths[name])
            break
    else:
        raise ConfigError("no projection file found; run the project stage first")
    vol = reconstruct(stack, geom, opts)
    save_volume(vol, paths["recon"])
    log.record("reconstruct", config, None, _with_sidecars([paths["recon"]]), out_dir)


def _pair_paths(out_dir: str, mode: str) -> tuple[str, str]:
    tag = mode.replace("-", "_")
    return (os.path.join(out_dir, f"pair_{tag}_input.raw"),
            os.path.join(out_dir, f"pair_{tag}_label.raw"))


def stage_prepare(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    opts = ReconOptions.from_dict(require_section(config, "recon"))
    photons, seed = _noise_params(config, seed_override)
    paths = _paths(out_dir)
    vol = load_volume(paths["volume"])
    modes = config.get("dataprep", {}).get("modes", [MODE_CONVENTIONAL, MODE_TASK_SPECIFIC])
    outputs = []
    for mode in modes:
        if mode == MODE_CONVENTIONAL:
            pair = prepare_conventional(vol, geom, opts, photons, seed)
        elif mode == MODE_TASK_SPECIFIC:
            mask = load_mask(paths["soi_mask"])
            pair = prepare_task_specific(vol, mask, geom, opts, photons, seed)
        else:
            raise ConfigError(f"unknown dataprep mode {mode!r}")
        in_path, label_path = _pair_paths(out_dir, mode)
        save_volume(pair.input, in_path)
        save_volume(pair.label, label_path)
        outputs += [in_path, label_path]
    log.record("prepare", config, seed, _with_sidecars(outputs), out_dir)


def _load_pairs(config, out_dir) -> list[TrainingPair]:
    modes = config.get("dataprep", {}).get("modes", [MODE_CONVENTIONAL, MODE_TASK_SPECIFIC])
    pairs = []
    for mode in modes:
        in_path, label_path = _pair_paths(out_dir, mode)
        if not os.path.exists(in_path):
            raise ConfigError(f"missing prepared pair for mode {mode!r}; run the prepare stage")
        pairs.append(TrainingPair(input=load_volume(in_path), label=load_volume(label_path),
                                  mode=mode, provenance={}))
    return pairs


def stage_export(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    dataprep = config.get("dataprep", {})
    export_cfg = dataprep.get("export", {})
    axis = export_cfg.get("axis", "axial")
    pairs = _load_pairs(config, out_dir)
    n_slices = pairs[0].input.values.shape[{"axial": 0, "coronal": 1, "sagittal": 2}[axis]]
    lo = int(export_cfg.get("slice_min", 0))
    hi = int(export_cfg.get("slice_max", n_slices))
    photons, seed = _noise_params(config, seed_override)
    paths = _paths(out_dir)
    manifest = export_slices(pairs, axis, range(lo, hi), paths["slices"], geom=geom, seed=seed)
    outputs = [os.path.join(paths["slices"], e[k]) for e in manifest.pairs for k in ("input_path", "label_path")]
    outputs.append(os.path.join(paths["slices"], "manifest.json"))
    log.record("export", config, seed, outputs, out_dir)


def stage_evaluate(config, out_dir, log, seed_override):
    geom = build_geometry(require_section(config, "geometry"))
    threshold = float(config.get("metrics", {}).get("threshold_hu", 150.0))
    paths = _paths(out_dir)
    mask = load_mask(paths["soi_mask"])
    outputs = []
    for mode in config.get("dataprep", {}).get("modes", [MODE_CONVENTIONAL, MODE_TASK_SPECIFIC]):
        in_path, label_path = _pair_paths(out_dir, mode)
        if not os.path.exists(in_path):
            continue
        pred = load_volume(in_path)
        ref = load_volume(label_path)
        # SOI mask from the label reconstruction: the threshold substitute for
        # manual segmentation, on the same grid as the pair
        soi = threshold_segment(ref, threshold)
        fov = fov_cylinder_mask(pred.dims, pred.voxel_mm, geom, pred.offset_mm)
        report = evaluate_pair(pred, ref, soi, fov, hu_threshold=threshold)
        report["mode"] = mode
        report["compared"] = "pair input (truncated recon) vs pair label"
        path = os.path.join(out_dir, f"report_{mode.replace('-', '_')}.json")
        with open(path, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
            f.write("\n")
        outputs.append(path)
    if not outputs:
        raise ConfigError("nothing to evaluate; run the prepare stage first")
    log.record("evaluate", config, None, outputs, out_dir)


def stage_pipeline(config, out_dir, log, seed_override):
    stage_phantom(config, out_dir, log, seed_override)
    stage_prepare(config, out_dir, log, seed_override)
    stage_export(config, out_dir, log, seed_override)
    stage_evaluate(config, out_dir, log, seed_override)


STAGE_FUNCS = {
    "phantom": stage_phantom,
    "project": stage_project,
    "noise": stage_noise,
    "extrapolate": stage_extrapolate,
    "reconstruct": stage_reconstruct,
    "prepare": stage_prepare,
    "export": stage_export,
    "evaluate": stage_evaluate,
    "pipeline": stage_pipeline,
}


def _resolve_threads(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("TRUNC_CBCT_THREADS")
    return int(env) if env else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="truncbct",
                                     description="Cone-beam CT simulation and truncated-data reconstruction pipeline")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="pipeline JSON config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dot path (JSON-parsed)")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        p.add_argument("--out", default="out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = _resolve_threads(args.threads)
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, threads))
    try:
        config = apply_overrides(load_config(args.config), args.set)
        require_section(config, "geometry")
        os.makedirs(args.out, exist_ok=True)
        log = RunLog(args.out)
        STAGE_FUNCS[args.stage](config, args.out, log, args.seed)
    except (ConfigError, GeometryError, VolumeError, ProjectionError, DataPrepError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
