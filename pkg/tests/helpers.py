"""Small shared problem builders for the test suite."""

import numpy as np

from fourierf.field import GridDims, VMField
from fourierf.render import Camera, Decoder, SampleBatch, generate_rays, look_at, pixel_grid, \
    sample_along_rays


def grad_problem(seed=0, n=4, rank=2, app_dim=6, hidden=8, std=0.5, shift=0.0, n_samples=16,
                 pixels=4):
    """A dims-n^3 VM field, tiny decoder, one camera's rays and random targets."""
    rng = np.random.default_rng(seed)
    field = VMField.random(GridDims.cube(n), (rank,) * 3, (rank,) * 3, app_dim=app_dim,
                           std=std, seed=seed, density_shift=shift)
    decoder = Decoder.random(app_dim, hidden=hidden, seed=seed + 1)
    cam = Camera.from_fov(0.9, pixels, pixels, look_at((3.0, 1.0, 1.5)))
    o, d = generate_rays(cam, pixel_grid(cam))
    t, deltas = sample_along_rays(len(o), 2.0, 5.0, n_samples, jitter=True, rng=rng)
    return field, decoder, SampleBatch(o, d, t, deltas), rng.uniform(size=(len(o), 3))
