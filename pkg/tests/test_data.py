import json
import math

import numpy as np
import pytest
from PIL import Image

from fourierf.data import (BLENDER_CAMERA_ANGLE_X, Primitive, SceneDataset, SpecError,
                           SyntheticSceneSpec, load_png, load_transforms, make_fewshot,
                           oracle_density, oracle_render, quantize, stratified_indices,
                           two_sphere_scene, write_transforms)
from fourierf.render import Camera, focal_from_fov, look_at


def _axis_cam(w=48, z=4.0, angle=0.6):
    c2w = np.eye(4)
    c2w[2, 3] = z
    return Camera.from_fov(angle, w, w, c2w)


def _sphere(radius=0.5, density=1e4, albedo=(1.0, 0.0, 0.0), center=(0.0, 0.0, 0.0)):
    return SyntheticSceneSpec([Primitive("sphere", center, radius, density, albedo)])


# -- oracle density -------------------------------------------------------

def test_oracle_density_examples():
    spec = _sphere(0.5, 50.0)
    s, c = oracle_density(spec, np.array([[0.9, 0.9, 0.9], [0.0, 0.1, 0.0]]))
    assert s[0] == 0 and tuple(c[0]) == (1, 1, 1)
    assert s[1] == 50 and tuple(c[1]) == (1, 0, 0)


def test_oracle_density_overlap_adds():
    spec = SyntheticSceneSpec([
        Primitive("sphere", (0, 0, 0), 0.5, 10.0, (1, 0, 0)),
        Primitive("box", (0.2, 0, 0), (0.6, 0.6, 0.6), 10.0, (0, 0, 1)),
    ])
    s, c = oracle_density(spec, np.array([0.1, 0.0, 0.0]))
    assert s == 20.0
    np.testing.assert_allclose(c, [0.5, 0, 0.5])


def test_spec_errors_name_field(tmp_path):
    with pytest.raises(SpecError, match=r"primitives\[0\]\.radius"):
        SyntheticSceneSpec.from_dict({"primitives": [
            {"kind": "sphere", "center": [0, 0, 0], "density": 1, "albedo": [1, 1, 1]}]})
    with pytest.raises(SpecError, match="density"):
        SyntheticSceneSpec.from_dict({"primitives": [
            {"kind": "sphere", "center": [0, 0, 0], "radius": 0.2, "density": -1,
             "albedo": [1, 1, 1]}]})
    with pytest.raises(SpecError) as info:
        SyntheticSceneSpec.from_dict({"primitives": [
            {"kind": "box", "center": [0.9, 0, 0], "size": [0.5, 0.1, 0.1], "density": 1,
             "albedo": [1, 1, 1]}]})
    assert info.value.field_name == "primitives[0]"
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(SpecError, match="<root>"):
        SyntheticSceneSpec.load(bad)


def test_spec_dict_round_trip():
    spec = two_sphere_scene()
    spec.primitives.append(Primitive("box", (0, 0, -0.5), (0.4, 0.2, 0.3), 5.0, (0, 1, 0)))
    assert SyntheticSceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# -- oracle render --------------------------------------------------------

def test_empty_spec_renders_background():
    img = oracle_render(SyntheticSceneSpec([], (0.2, 0.3, 0.4)), _axis_cam(16), 64)
    np.testing.assert_array_equal(img, np.broadcast_to([0.2, 0.3, 0.4], img.shape))


def test_sphere_silhouette_radius():
    cam, r, dist = _axis_cam(64), 0.5, 4.0
    img = oracle_render(_sphere(r), cam, 256)
    disk = np.abs(img - 1.0).sum(-1) > 0.5
    measured = math.sqrt(disk.sum() / math.pi)
    expect = cam.focal * math.tan(math.asin(r / dist))
    assert abs(measured - expect) <= 2.0
    ys, xs = np.nonzero(disk)
    assert abs(xs.mean() - 31.5) < 1.0 and abs(ys.mean() - 31.5) < 1.0
    np.testing.assert_allclose(img[32, 32], [1, 0, 0], atol=1e-9)


def test_render_converges_in_samples():
    spec = two_sphere_scene(density=100.0)
    cam = Camera.from_fov(0.7, 24, 24, look_at((3.0, 2.0, 2.0)))
    a = oracle_render(spec, cam, 512)
    b = oracle_render(spec, cam, 1024)
    assert np.mean(np.abs(a - b)) < 1 / 255


def test_render_needs_enough_samples():
    with pytest.raises(ValueError):
        oracle_render(two_sphere_scene(), _axis_cam(4), 32)


# -- few-shot splits ------------------------------------------------------

def _dataset(n_train, n_test):
    cams = [_axis_cam(2, z=3.0 + 0.01 * q) for q in range(n_train + n_test)]
    imgs = [np.full((2, 2, 3), q / 200) for q in range(n_train + n_test)]
    return SceneDataset(cams, imgs, ["train"] * n_train + ["test"] * n_test)


def test_stratified_rule():
    assert stratified_indices(100, 4) == [0, 25, 50, 75]
    sub = make_fewshot(_dataset(100, 10), 4, n_test=2)
    assert [round(float(im[0, 0, 0]) * 200) for im in sub.train.images] == [0, 25, 50, 75]
    assert len(sub.test) == 2
    with pytest.raises(ValueError):
        make_fewshot(_dataset(3, 1), 4)


def test_fewshot_from_spec_is_deterministic():
    kw = dict(n_test=3, seed=5, width=8, height=8, n_samples=64)
    a = make_fewshot(two_sphere_scene(), 2, **kw)
    b = make_fewshot(two_sphere_scene(), 2, **kw)
    assert a.splits == ["train"] * 2 + ["test"] * 3
    assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
    assert all(np.array_equal(x.c2w, y.c2w) for x, y in zip(a.cameras, b.cameras))


# -- transforms I/O -------------------------------------------------------

def test_focal_for_blender_angle():
    assert focal_from_fov(0.6911112, 800) == pytest.approx(1111.11, abs=0.01)


def test_transforms_round_trip(tmp_path):
    ds = make_fewshot(two_sphere_scene(), 3, n_test=2, width=10, height=8, n_samples=64)
    write_transforms(ds, tmp_path)
    back = load_transforms(tmp_path)
    assert back.splits == ds.splits
    assert back.camera_angle_x == pytest.approx(BLENDER_CAMERA_ANGLE_X)
    for a, b in zip(ds.images, back.images):
        np.testing.assert_array_equal(quantize(a), b)
    for a, b in zip(ds.cameras, back.cameras):
        np.testing.assert_allclose(a.c2w, b.c2w, atol=1e-12)
        assert a.focal == pytest.approx(b.focal)
    doc = json.loads((tmp_path / "transforms_train.json").read_text())
    assert len(doc["frames"]) == 3 and set(doc["frames"][0]) == {"file_path", "transform_matrix"}


def test_transparent_rgba_on_background(tmp_path):
    arr = np.zeros((2, 3, 4), dtype=np.uint8)
    arr[..., :3] = (200, 10, 50)
    Image.fromarray(arr, "RGBA").save(tmp_path / "a.png")
    np.testing.assert_array_equal(load_png(tmp_path / "a.png"), 1.0)
    np.testing.assert_array_equal(load_png(tmp_path / "a.png", (0, 0, 0)), 0.0)


def _write_single(tmp_path, matrix):
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(tmp_path / "f.png")
    doc = {"camera_angle_x": 0.5, "frames": [{"file_path": "./f", "transform_matrix": matrix}]}
    (tmp_path / "transforms_train.json").write_text(json.dumps(doc))


def test_rejects_non_orthonormal_rotation(tmp_path):
    m = np.eye(4)
    m[0, 0] = 1.01
    _write_single(tmp_path, m.tolist())
    with pytest.raises(ValueError, match="orthonormal") as info:
        load_transforms(tmp_path)
    assert "transforms_train.json" in str(info.value)


def test_accepts_small_orthonormality_error(tmp_path):
    m = np.eye(4)
    m[0, 1] = 2e-4
    _write_single(tmp_path, m.tolist())
    rot = load_transforms(tmp_path).cameras[0].c2w[:3, :3]
    assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-12


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="transforms_train.json"):
        load_transforms(tmp_path)
    doc = {"camera_angle_x": 0.5, "frames": [{"file_path": "./gone",
                                              "transform_matrix": np.eye(4).tolist()}]}
    (tmp_path / "transforms_train.json").write_text(json.dumps(doc))
    with pytest.raises(FileNotFoundError, match="gone.png"):
        load_transforms(tmp_path)


def test_dataset_requires_equal_image_shapes():
    with pytest.raises(ValueError):
        SceneDataset([_axis_cam(2)] * 2, [np.zeros((2, 2, 3)), np.zeros((3, 2, 3))],
                     ["train"] * 2)
