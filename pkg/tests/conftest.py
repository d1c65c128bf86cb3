import json
import math
from importlib import resources

import numpy as np
import pytest

from truncbct.geometry import build_geometry
from truncbct.volumes import Cylinder, PhantomSpec, rasterize_phantom

# warnings from the sandbox TBB version probe are harmless
pytestmark = pytest.mark.filterwarnings("ignore::numba.NumbaWarning")


TINY_GEOMETRY = {
    "sdd_mm": 600.0,
    "sid_mm": 350.0,
    "det_cols": 36,
    "det_rows": 32,
    "virt_cols": 96,
    "pixel_w_mm": 5.0,
    "pixel_h_mm": 5.0,
    "angular_range_deg": 200.0,
    "angular_step_deg": 5.0,
    "start_angle_deg": 0.0,
}

TINY_GRID = dict(dims=(48, 48, 48), voxel_mm=(4.0, 4.0, 4.0))


@pytest.fixture(scope="session")
def tiny_geom():
    return build_geometry(TINY_GEOMETRY)


@pytest.fixture(scope="session")
def desk_config():
    with resources.files("truncbct").joinpath("configs/desk128.json").open() as f:
        return json.load(f)


@pytest.fixture(scope="session")
def desk_geom(desk_config):
    return build_geometry(desk_config["geometry"])


def tiny_rib_ring_spec(n_ribs=6, ring_radius=62.0, body_radius=70.0):
    """Body beyond the tiny FOV (~51.9 mm) with bone ribs outside the FOV."""
    prims = [Cylinder((0.0, 0.0, 0.0), body_radius, 120.0, 1000.0, "z")]
    for k in range(n_ribs):
        a = 2 * math.pi * k / n_ribs
        prims.append(Cylinder((ring_radius * math.cos(a), ring_radius * math.sin(a), 0.0),
                              5.0, 100.0, 1000.0, "z"))
    return PhantomSpec(tuple(prims))


@pytest.fixture(scope="session")
def tiny_rib_volume():
    return rasterize_phantom(tiny_rib_ring_spec(), **TINY_GRID)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240607)
