import numpy as np
import pytest

import raytomo as rt
from raytomo.interp import BSplineSampler


@pytest.fixture(scope="session")
def fisheye2d():
    """2D fish-eye validation field with its prefiltered sampler."""
    field = rt.fisheye_field(2)
    return field, BSplineSampler(field)


@pytest.fixture(scope="session")
def fisheye3d():
    field = rt.fisheye_field(3)
    return field, BSplineSampler(field)


@pytest.fixture(scope="session")
def blob_setup():
    """Desk-scale 2D inversion scene: 64x64 grid, 32-element ring, one
    Gaussian blob with +3% sound-speed contrast."""
    n = 64
    extent = 0.2
    spacing = extent / (n - 1)
    spec = rt.GridSpec((-extent / 2, -extent / 2), spacing, (n, n))
    blob = rt.Blob(center=(0.01, -0.005), radius=0.025, amplitude=45.0)
    truth = rt.rasterize(rt.PhantomSpec("blobs", c0=1500.0, blobs=(blob,)), spec)
    geometry = rt.ring_array(32, 0.085)
    return spec, truth, geometry


@pytest.fixture(scope="session")
def blob_tofs(blob_setup):
    spec, truth, geometry = blob_setup
    return rt.synth_tofs(truth, geometry)
