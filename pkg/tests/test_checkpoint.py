import numpy as np
import pytest

from fourierf.checkpoint import load_checkpoint, save_checkpoint
from fourierf.field import CPField, GridDims, VMField
from fourierf.render import Camera, Decoder, RadianceModel, RenderConfig, look_at


@pytest.mark.parametrize("kind", ["vm", "cp"])
def test_round_trip_renders_identically(tmp_path, kind):
    dims = GridDims(5, 6, 4, (-1, -1, -1), (1, 1, 1))
    if kind == "vm":
        field = VMField.random(dims, (1, 2, 3), (2, 1, 1), app_dim=5, seed=1, std=0.5)
    else:
        field = CPField.random(dims, 3, 2, app_dim=5, seed=1, std=0.5, density_shift=-1.5)
    model = RadianceModel(field, Decoder.random(5, 7, seed=2),
                          RenderConfig(2.0, 6.0, 24, (0.0, 0.0, 0.0)))
    path = tmp_path / "m.ffr"
    save_checkpoint(path, model, {"iter": 12})
    back, meta = load_checkpoint(path)
    assert meta == {"iter": 12}
    assert back.field.kind == kind and back.field.density_shift == field.density_shift
    assert all(np.array_equal(model.params[k], back.params[k]) for k in model.params)
    cam = Camera.from_fov(0.8, 6, 5, look_at((3.0, 1.0, 1.0)))
    np.testing.assert_array_equal(model.render(cam)[0], back.render(cam)[0])


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.ffr"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(path)
