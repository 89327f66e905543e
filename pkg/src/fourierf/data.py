"""Posed image datasets, analytic ground-truth scenes and their oracle renderer.

On-disk datasets follow the NeRF-synthetic layout::

    transforms_train.json   {"camera_angle_x": ..., "frames": [
                                {"file_path": "./train/r_0", "transform_matrix": [[...]]}]}
    transforms_test.json
    train/r_0.png ...

Scene specs are JSON documents::

    {"background": [1, 1, 1],
     "primitives": [{"kind": "sphere", "center": [0, 0, 0], "radius": 0.5,
                     "density": 50, "albedo": [1, 0, 0]},
                    {"kind": "box", "center": [0, 0, 0], "size": [0.2, 0.2, 0.2],
                     "density": 10, "albedo": [0, 1, 0]}]}

The oracle renderer shares no code with the field/decoder path: it evaluates
the primitives directly and integrates with its own quadrature.
"""

from dataclasses import dataclass, field as dc_field
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_positive_int
from .field import DEFAULT_DENSITY_SHIFT, GridDims, VMField
from .render import (WHITE, Camera, Decoder, focal_from_fov, generate_rays, look_at,
                     pixel_grid)

BLENDER_CAMERA_ANGLE_X = 0.6911112070083618
UNIT_AABB = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


class SpecError(ValueError):
    """A scene spec field is missing or invalid."""

    def __init__(self, field_name, reason):
        super().__init__(f"invalid scene spec field '{field_name}': {reason}")
        self.field_name = field_name


@dataclass
class Primitive:
    kind: str  # "sphere" or "box"
    center: tuple
    size: object  # radius for spheres, full edge lengths (3,) for boxes
    density: float
    albedo: tuple

    def contains(self, p):
        c = np.asarray(self.center)
        if self.kind == "sphere":
            return np.sum((p - c) ** 2, axis=-1) <= float(self.size) ** 2
        half = 0.5 * np.asarray(self.size)
        return np.all(np.abs(p - c) <= half, axis=-1)

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        half = float(self.size) if self.kind == "sphere" else 0.5 * np.asarray(self.size)
        return c - half, c + half


@dataclass
class SyntheticSceneSpec:
    primitives: list = dc_field(default_factory=list)
    background: tuple = WHITE

    def __post_init__(self):
        lo, hi = UNIT_AABB
        for n, prim in enumerate(self.primitives):
            where = f"primitives[{n}]"
            if prim.kind not in ("sphere", "box"):
                raise SpecError(f"{where}.kind", f"unknown kind {prim.kind!r}")
            if not prim.density >= 0:
                raise SpecError(f"{where}.density", "must be >= 0")
            if len(prim.albedo) != 3 or not all(0 <= a <= 1 for a in prim.albedo):
                raise SpecError(f"{where}.albedo", "must be 3 values in [0, 1]")
            pmin, pmax = prim.bounds()
            if np.any(pmin < lo) or np.any(pmax > hi):
                raise SpecError(f"{where}", "primitive must lie inside the unit box [-1, 1]^3")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise SpecError("<root>", "expected a JSON object")
        background = doc.get("background", list(WHITE))
        if not (isinstance(background, list) and len(background) == 3):
            raise SpecError("background", "must be a list of 3 numbers")
        prims = []
        entries = doc.get("primitives")
        if not isinstance(entries, list):
            raise SpecError("primitives", "must be a list")
        for n, entry in enumerate(entries):
            where = f"primitives[{n}]"
            kind = entry.get("kind")
            key = "radius" if kind == "sphere" else "size"
            for name in ("kind", "center", key, "density", "albedo"):
                if name not in entry:
                    raise SpecError(f"{where}.{name}", "missing")
            center = entry["center"]
            if not (isinstance(center, list) and len(center) == 3):
                raise SpecError(f"{where}.center", "must be a list of 3 numbers")
            size = entry[key]
            if kind == "sphere":
                if not isinstance(size, (int, float)) or size <= 0:
                    raise SpecError(f"{where}.radius", "must be a positive number")
            elif not (isinstance(size, list) and len(size) == 3 and all(s > 0 for s in size)):
                raise SpecError(f"{where}.size", "must be 3 positive numbers")
            if not isinstance(entry["density"], (int, float)):
                raise SpecError(f"{where}.density", "must be a number")
            prims.append(Primitive(kind, tuple(map(float, center)),
                                   float(size) if kind == "sphere" else tuple(map(float, size)),
                                   float(entry["density"]), tuple(map(float, entry["albedo"]))))
        return cls(prims, tuple(map(float, background)))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError("<root>", f"not valid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        prims = []
        for p in self.primitives:
            entry = {"kind": p.kind, "center": list(p.center), "density": p.density,
                     "albedo": list(p.albedo)}
            entry["radius" if p.kind == "sphere" else "size"] = (
                p.size if p.kind == "sphere" else list(p.size))
            prims.append(entry)
        return {"background": list(self.background), "primitives": prims}


def two_sphere_scene(density=40.0):
    """The reference desk-scale scene: two coloured spheres on white."""
    return SyntheticSceneSpec([
        Primitive("sphere", (-0.3, -0.25, 0.0), 0.38, density, (0.85, 0.2, 0.15)),
        Primitive("sphere", (0.35, 0.3, 0.05), 0.32, density, (0.15, 0.35, 0.9)),
    ], WHITE)


def oracle_density(spec, p):
    """Density and colour of the analytic scene at world points ``p`` (``(..., 3)``).

    Overlapping primitives add densities; colour is the density-weighted mean
    albedo, or the background where the density is zero.
    """
    p = np.asarray(p, dtype=np.float64)
    sigma = np.zeros(p.shape[:-1])
    weighted = np.zeros(p.shape[:-1] + (3,))
    for prim in spec.primitives:
        inside = prim.contains(p)
        sigma += inside * prim.density
        weighted += (inside * prim.density)[..., None] * np.asarray(prim.albedo)
    rgb = np.empty_like(weighted)
    hit = sigma > 0
    rgb[hit] = weighted[hit] / sigma[hit][:, None]
    rgb[~hit] = np.asarray(spec.background)
    return sigma, rgb


def oracle_render(spec, cam, n_samples=512, near=2.0, far=6.0, chunk=2048):
    """Ground-truth image of ``spec`` seen from ``cam`` by midpoint quadrature."""
    if n_samples < 64:
        raise ValueError(f"oracle_render needs n_samples >= 64, got {n_samples}")
    origins, dirs = generate_rays(cam, pixel_grid(cam))
    step = (far - near) / n_samples
    t = near + step * (np.arange(n_samples) + 0.5)
    bg = np.asarray(spec.background, dtype=np.float64)
    image = np.empty((len(origins), 3))
    for lo in range(0, len(origins), chunk):
        o, d = origins[lo:lo + chunk], dirs[lo:lo + chunk]
        pts = o[:, None, :] + t[None, :, None] * d[:, None, :]
        sigma, rgb = oracle_density(spec, pts)
        survive = np.exp(-sigma * step)
        trans = np.cumprod(np.concatenate([np.ones((len(o), 1)), survive[:, :-1]], axis=1),
                           axis=1)
        w = trans * (1.0 - survive)
        image[lo:lo + chunk] = (w[..., None] * rgb).sum(axis=1) + (1.0 - w.sum(axis=1))[:, None] * bg
    return image.reshape(cam.height, cam.width, 3)


@dataclass
class SceneDataset:
    """Posed images with train/test labels."""

    cameras: list
    images: list
    splits: list
    background: tuple = WHITE
    camera_angle_x: float = BLENDER_CAMERA_ANGLE_X

    def __post_init__(self):
        if not (len(self.cameras) == len(self.images) == len(self.splits)):
            raise ValueError("cameras, images and splits must have equal length")
        shapes = {np.shape(im) for im in self.images}
        if len(shapes) > 1:
            raise ValueError(f"all images must share dimensions, got {sorted(shapes)}")

    def __len__(self):
        return len(self.images)

    def split(self, name):
        keep = [n for n, s in enumerate(self.splits) if s == name]
        return SceneDataset([self.cameras[n] for n in keep], [self.images[n] for n in keep],
                            [name] * len(keep), self.background, self.camera_angle_x)

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")


def quantize(image):
    """Round to the 8-bit grid that PNG storage imposes."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def ring_cameras(n, radius=4.0, elevation_deg=30.0, azimuth_offset_deg=0.0, width=64,
                 height=64, camera_angle_x=BLENDER_CAMERA_ANGLE_X):
    """``n`` cameras evenly spaced on a horizontal ring, all looking at the origin."""
    cams = []
    el = math.radians(elevation_deg)
    for q in range(n):
        az = math.radians(azimuth_offset_deg + 360.0 * q / n)
        eye = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az),
                                 math.sin(el)])
        cams.append(Camera.from_fov(camera_angle_x, width, height, look_at(eye)))
    return cams


def stratified_indices(n_total, n_views):
    n_views = check_positive_int(n_views, "n_views")
    if n_views > n_total:
        raise ValueError(f"requested {n_views} views but only {n_total} frames are available")
    return [q * n_total // n_views for q in range(n_views)]


def make_fewshot(source, n_views, n_test=16, seed=0, width=64, height=64, radius=4.0,
                 n_samples=512, near=2.0, far=6.0):
    """Few-shot split from a scene spec (minted by the oracle) or a loaded dataset.

    Specs: training cameras sit on a fixed 30-degree ring; test cameras cycle
    through elevations 15/30/45 degrees at seed-dependent azimuths.
    Datasets: index-stratified subsampling of the train and test frames.
    """
    n_test = check_positive_int(n_test, "n_test", minimum=0)
    if isinstance(source, SceneDataset):
        train, test = source.train, source.test
        tr = stratified_indices(len(train), n_views)
        te = stratified_indices(len(test), n_test) if n_test else []
        return SceneDataset([train.cameras[q] for q in tr] + [test.cameras[q] for q in te],
                            [train.images[q] for q in tr] + [test.images[q] for q in te],
                            ["train"] * len(tr) + ["test"] * len(te),
                            source.background, source.camera_angle_x)
    check_positive_int(n_views, "n_views")
    rng = np.random.default_rng(seed)
    train_cams = ring_cameras(n_views, radius, 30.0, 45.0, width, height)
    test_cams = []
    offsets = rng.uniform(0.0, 360.0, size=n_test)
    for q in range(n_test):
        test_cams += ring_cameras(1, radius, (15.0, 30.0, 45.0)[q % 3], offsets[q], width,
                                  height)
    cams = train_cams + test_cams
    images = [quantize(oracle_render(source, c, n_samples, near, far)) for c in cams]
    return SceneDataset(cams, images, ["train"] * len(train_cams) + ["test"] * len(test_cams),
                        tuple(source.background))


# -- transforms.json I/O --------------------------------------------------

def write_transforms(dataset, out_dir):
    """Write ``dataset`` in the NeRF-synthetic on-disk convention."""
    out_dir = Path(out_dir)
    for split in ("train", "test"):
        sub = dataset.split(split)
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        frames = []
        for n, (cam, img) in enumerate(zip(sub.cameras, sub.images)):
            rel = f"./{split}/r_{n}"
            save_png(out_dir / f"{split}/r_{n}.png", img)
            frames.append({"file_path": rel, "transform_matrix": cam.c2w.tolist()})
        doc = {"camera_angle_x": dataset.camera_angle_x, "frames": frames}
        with open(out_dir / f"transforms_{split}.json", "w") as fh:
            json.dump(doc, fh, indent=2)


def save_png(path, image):
    arr = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, optimize=False)


def load_png(path, background=WHITE):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA") if im.mode != "RGB" else im, dtype=np.float64) / 255.0
    if arr.shape[-1] == 4:
        alpha = arr[..., 3:4]
        arr = arr[..., :3] * alpha + np.asarray(background) * (1.0 - alpha)
    return arr


def _pose_from_json(matrix, where):
    c2w = np.asarray(matrix, dtype=np.float64)
    if c2w.shape != (4, 4):
        raise ValueError(f"{where}: transform_matrix must be 4x4, got shape {c2w.shape}")
    rot = c2w[:3, :3]
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > 1e-3:
        raise ValueError(f"{where}: rotation block not orthonormal (error {err:.3g} > 1e-3)")
    if err > 1e-6:
        u, _, vt = np.linalg.svd(rot)
        c2w = c2w.copy()
        c2w[:3, :3] = u @ vt
    return c2w


def load_transforms(directory, background=WHITE, splits=("train", "test")):
    """Load a NeRF-synthetic style dataset directory."""
    directory = Path(directory)
    cams, images, labels = [], [], []
    angle = None
    for split in splits:
        path = directory / f"transforms_{split}.json"
        if not path.exists():
            if split == "train":
                raise FileNotFoundError(f"{path}: missing transforms file")
            continue
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON ({exc})") from exc
        if "camera_angle_x" not in doc or "frames" not in doc:
            raise ValueError(f"{path}: needs 'camera_angle_x' and 'frames'")
        angle = float(doc["camera_angle_x"])
        for n, frame in enumerate(doc["frames"]):
            where = f"{path} frames[{n}]"
            if "file_path" not in frame or "transform_matrix" not in frame:
                raise ValueError(f"{where}: needs 'file_path' and 'transform_matrix'")
            img_path = directory / frame["file_path"]
            if img_path.suffix.lower() != ".png":
                img_path = img_path.with_name(img_path.name + ".png")
            if not img_path.exists():
                raise FileNotFoundError(f"{img_path}: missing image for {where}")
            img = load_png(img_path, background)
            c2w = _pose_from_json(frame["transform_matrix"], where)
            h, w = img.shape[:2]
            cams.append(Camera(w, h, focal_from_fov(angle, w), c2w))
            images.append(img)
            labels.append(split)
    return SceneDataset(cams, images, labels, tuple(background), angle)


# -- baking ---------------------------------------------------------------

def _inverse_softplus(sigma, floor=-30.0):
    sigma = np.asarray(sigma, dtype=np.float64)
    with np.errstate(divide="ignore"):
        raw = sigma + np.log(-np.expm1(-sigma))
    return np.maximum(raw, floor)


def bake_field(spec, n=64, app_dim=27):
    """Exact VM representation of ``spec`` sampled at the nodes of an ``n^3`` grid.

    Density uses one rank per z-slice (``line = e_k``, ``plane = slice``); the
    appearance stores colour logits per slice and channel. The returned decoder
    passes logits straight through the sigmoid, so decoded colour equals the
    baked albedo at every node.
    """
    dims = GridDims.cube(n, *UNIT_AABB)
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(*UNIT_AABB)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    sigma, rgb = oracle_density(spec, pts)
    raw = _inverse_softplus(sigma) - DEFAULT_DENSITY_SHIFT
    logits = np.log(np.clip(rgb, 1e-4, 1 - 1e-4)) - np.log1p(-np.clip(rgb, 1e-4, 1 - 1e-4))

    field = VMField.zeros(dims, (1, 1, n), (1, 1, 3 * n), app_dim)
    p = field.params
    p["density.line.2"] = np.eye(n)
    p["density.plane.2"] = np.moveaxis(raw, 2, 0).copy()
    p["appearance.line.2"] = np.repeat(np.eye(n), 3, axis=0)
    p["appearance.plane.2"] = np.moveaxis(logits, (2, 3), (0, 1)).reshape(3 * n, n, n).copy()
    basis = np.zeros((2 + 3 * n, app_dim))
    basis[2:, :3] = np.tile(np.eye(3), (n, 1))
    p["appearance.basis"] = basis

    w1 = np.zeros((6, app_dim))
    w1[:3, :3] = np.eye(3)
    w1[3:, :3] = -np.eye(3)
    w2 = np.hstack([np.eye(3), -np.eye(3)])
    return field, Decoder(w1, w2)
