"""Pinhole cameras, ray marching and emission-absorption compositing.

Cameras follow the NeRF-synthetic OpenGL convention: the camera looks down
its local ``-z`` axis with ``+y`` up, and ``c2w`` maps camera to world.
"""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from ._validation import check_array, check_positive_int, check_rotation
from .field import in_box, world_to_grid

WHITE = (1.0, 1.0, 1.0)
BLACK = (0.0, 0.0, 0.0)


@dataclass
class Camera:
    width: int
    height: int
    focal: float
    c2w: np.ndarray

    def __post_init__(self):
        check_positive_int(self.width, "width")
        check_positive_int(self.height, "height")
        if not self.focal > 0:
            raise ValueError(f"focal must be > 0, got {self.focal!r}")
        self.focal = float(self.focal)
        self.c2w = check_rotation(self.c2w, tol=1e-6)

    @classmethod
    def from_fov(cls, camera_angle_x, width, height, c2w):
        return cls(width, height, focal_from_fov(camera_angle_x, width), c2w)

    @property
    def origin(self):
        return self.c2w[:3, 3].copy()


def focal_from_fov(camera_angle_x, width):
    return 0.5 * width / math.tan(0.5 * camera_angle_x)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose at ``eye`` whose ``-z`` axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross((0.0, 1.0, 0.0), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, true_up, back, eye
    return c2w


def pixel_grid(cam):
    """All integer pixel coordinates of ``cam`` in row-major order, shape (H*W, 2)."""
    v, u = np.mgrid[0:cam.height, 0:cam.width]
    return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)


def generate_rays(cam, pixels):
    """Rays through the centres of ``pixels`` (``(N, 2)`` array of ``(u, v)``).

    Returns ``(origins, directions)``, both ``(N, 3)``, directions unit length.
    """
    pixels = check_array(pixels, name="pixels")
    pixels = np.atleast_2d(pixels)
    u, v = pixels[:, 0], pixels[:, 1]
    if np.any((u < 0) | (u >= cam.width) | (v < 0) | (v >= cam.height)):
        raise ValueError(f"pixel outside the {cam.width}x{cam.height} image")
    d_cam = np.stack([(u + 0.5 - 0.5 * cam.width) / cam.focal,
                      -(v + 0.5 - 0.5 * cam.height) / cam.focal,
                      -np.ones_like(u)], axis=-1)
    dirs = d_cam @ cam.c2w[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.c2w[:3, 3], dirs.shape).copy()
    return origins, dirs


@dataclass
class SampleBatch:
    """Quadrature points along a batch of rays."""

    origins: np.ndarray  # (B, 3)
    dirs: np.ndarray  # (B, 3)
    t: np.ndarray  # (B, S)
    deltas: np.ndarray  # (B, S)

    @property
    def points(self):
        return self.origins[:, None, :] + self.t[..., None] * self.dirs[:, None, :]

    def __len__(self):
        return len(self.origins)


def sample_along_rays(n_rays, near, far, n_samples, jitter=False, rng=None):
    """Stratified depths in ``[near, far]``: bin midpoints, or uniform within bins.

    Returns ``(t, deltas)`` of shape ``(n_rays, n_samples)``; the last segment
    length is the bin width.
    """
    if not 0 < near < far:
        raise ValueError(f"need 0 < near < far, got near={near}, far={far}")
    check_positive_int(n_samples, "n_samples", minimum=2)
    width = (far - near) / n_samples
    edges = near + width * np.arange(n_samples)
    if jitter:
        if rng is None:
            raise ValueError("jitter requires an rng")
        offsets = rng.random((n_rays, n_samples))
    else:
        offsets = np.full((n_rays, n_samples), 0.5)
    t = edges[None, :] + width * offsets
    deltas = np.empty_like(t)
    deltas[:, :-1] = np.diff(t, axis=1)
    deltas[:, -1] = width
    return t, deltas


def sample_along_ray(origin, direction, near, far, n_samples, jitter=False, rng=None):
    t, deltas = sample_along_rays(1, near, far, n_samples, jitter, rng)
    return SampleBatch(np.atleast_2d(origin), np.atleast_2d(direction), t, deltas)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


class Decoder:
    """Two-layer perceptron from appearance features to RGB.

    ``rgb = sigmoid(w2 @ relu(w1 @ x))`` where ``x`` is the feature vector,
    optionally followed by the raw view direction. No positional encodings.
    """

    def __init__(self, w1, w2, use_viewdirs=False):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.use_viewdirs = bool(use_viewdirs)
        if self.w2.shape != (3, self.w1.shape[0]):
            raise ValueError(f"w2 must have shape (3, {self.w1.shape[0]}), got {self.w2.shape}")

    @classmethod
    def random(cls, app_dim, hidden=64, use_viewdirs=False, seed=0):
        rng = np.random.default_rng(seed)
        n_in = app_dim + (3 if use_viewdirs else 0)
        w1 = rng.standard_normal((hidden, n_in)) * np.sqrt(2.0 / n_in)
        w2 = rng.standard_normal((3, hidden)) / np.sqrt(hidden)
        return cls(w1, w2, use_viewdirs)

    @property
    def in_dim(self):
        return self.w1.shape[1]

    @property
    def params(self):
        return {"decoder.w1": self.w1, "decoder.w2": self.w2}

    def copy(self):
        return Decoder(self.w1.copy(), self.w2.copy(), self.use_viewdirs)

    def _inputs(self, appearance, dirs):
        if self.use_viewdirs:
            return np.concatenate([appearance, dirs], axis=-1)
        return appearance

    def forward(self, appearance, dirs=None):
        x = self._inputs(appearance, dirs)
        pre = x @ self.w1.T
        h = np.maximum(pre, 0.0)
        rgb = _sigmoid(h @ self.w2.T)
        return rgb, (x, pre, h, rgb)

    def backward(self, cache, g_rgb):
        """Return ``(grads, g_appearance)`` for an upstream gradient ``g_rgb``."""
        x, pre, h, rgb = cache
        g_out = g_rgb * rgb * (1.0 - rgb)
        g_w2 = g_out.T @ h
        g_h = g_out @ self.w2
        g_pre = np.where(pre > 0.0, g_h, 0.0)
        g_w1 = g_pre.T @ x
        g_x = g_pre @ self.w1
        n_app = self.in_dim - (3 if self.use_viewdirs else 0)
        return {"decoder.w1": g_w1, "decoder.w2": g_w2}, g_x[:, :n_app]


def decode_color(decoder, appearance, d=None):
    """Decode features (``(F,)`` or ``(N, F)``) into RGB in [0, 1]."""
    appearance = np.asarray(appearance, dtype=np.float64)
    single = appearance.ndim == 1
    appearance = np.atleast_2d(appearance)
    if d is not None:
        d = np.broadcast_to(np.asarray(d, dtype=np.float64), (len(appearance), 3))
    elif decoder.use_viewdirs:
        raise ValueError("decoder consumes view directions but none were given")
    rgb, _ = decoder.forward(appearance, d)
    return rgb[0] if single else rgb


def _exclusive(cum):
    """Shift a cumulative sum one step right along the last axis, starting at 0."""
    out = np.zeros_like(cum)
    out[..., 1:] = cum[..., :-1]
    return out


def composite(sigma, rgb, deltas, background, t=None):
    """Front-to-back emission-absorption quadrature.

    Accepts a single ray (``sigma`` of shape ``(S,)``) or a batch ``(B, S)``.
    Returns a dict with ``rgb``, ``depth`` (``sum w_s t_s``, unnormalised),
    ``opacity``, ``weights``, ``trans`` (transmittance before each sample) and
    ``trans_final``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    single = sigma.ndim == 1
    sigma = np.atleast_2d(sigma)
    rgb = np.asarray(rgb, dtype=np.float64).reshape(sigma.shape + (3,))
    deltas = np.broadcast_to(np.asarray(deltas, dtype=np.float64), sigma.shape)
    background = np.asarray(background, dtype=np.float64)
    if np.any(sigma < 0) or np.any(deltas <= 0):
        raise ValueError("composite needs sigma >= 0 and deltas > 0")
    tau = sigma * deltas
    cum = np.cumsum(tau, axis=-1)
    trans = np.exp(-_exclusive(cum))
    alpha = -np.expm1(-tau)
    weights = trans * alpha
    trans_final = np.exp(-cum[:, -1])
    opacity = weights.sum(axis=-1)
    color = np.einsum("bs,bsc->bc", weights, rgb) + (1.0 - opacity)[:, None] * background
    out = {"rgb": color, "opacity": opacity, "weights": weights, "trans": trans,
           "trans_final": trans_final, "alpha": alpha}
    if t is not None:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), sigma.shape)
        out["depth"] = (weights * t).sum(axis=-1)
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out


def normalized_depth(depth, opacity, fill=0.0):
    """Expected termination depth conditioned on the ray terminating."""
    depth = np.asarray(depth, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(opacity > 0, depth / np.where(opacity > 0, opacity, 1.0), fill)


@dataclass
class RenderConfig:
    near: float = 2.0
    far: float = 6.0
    n_samples: int = 128
    background: tuple = WHITE
    jitter: bool = False
    early_stop: float = 1e-4  # transmittance below which appearance is skipped
    weight_threshold: float = 1e-4
    chunk: int = 4096

    def to_dict(self):
        return {"near": self.near, "far": self.far, "n_samples": self.n_samples,
                "background": list(self.background), "jitter": self.jitter,
                "early_stop": self.early_stop, "weight_threshold": self.weight_threshold,
                "chunk": self.chunk}


def march(field, decoder, batch, background, early_stop=0.0, weight_threshold=0.0):
    """Forward-render a :class:`SampleBatch`, keeping intermediates for backward.

    Samples whose transmittance has fallen below ``early_stop``, or whose
    compositing weight is below ``weight_threshold``, skip the appearance
    branch and contribute black. Returns ``(outputs, cache)``.
    """
    n_rays, n_samples = batch.t.shape
    coords = world_to_grid(batch.points, field.dims).reshape(-1, 3)
    inside = np.flatnonzero(in_box(coords, field.dims))
    sigma = np.zeros(n_rays * n_samples)
    raw, dcache = field._forward(coords[inside], "density")
    sigma[inside] = field.sigma(raw)
    sigma = sigma.reshape(n_rays, n_samples)

    tau = sigma * batch.deltas
    trans = np.exp(-_exclusive(np.cumsum(tau, axis=-1)))
    active = inside
    if early_stop > 0:
        active = active[trans.ravel()[active] >= early_stop]
    if weight_threshold > 0:
        weights = (trans * -np.expm1(-tau)).ravel()
        active = active[weights[active] >= weight_threshold]
    app, acache = field._forward(coords[active], "appearance")
    dirs = batch.dirs[active // n_samples] if decoder.use_viewdirs else None
    rgb_active, rcache = decoder.forward(app, dirs)
    rgb = np.zeros((n_rays * n_samples, 3))
    rgb[active] = rgb_active
    rgb = rgb.reshape(n_rays, n_samples, 3)

    out = composite(sigma, rgb, batch.deltas, background, t=batch.t)
    cache = {"inside": inside, "active": active, "raw": raw, "dcache": dcache,
             "acache": acache, "rcache": rcache, "sigma": sigma, "rgb": rgb,
             "background": np.asarray(background, dtype=np.float64)}
    return out, cache


def render_rays(field, decoder, origins, dirs, cfg, rng=None):
    """Render rays in chunks; returns ``(rgb, depth, opacity)`` arrays."""
    n = len(origins)
    rgb = np.empty((n, 3))
    depth = np.empty(n)
    opacity = np.empty(n)
    for lo in range(0, n, cfg.chunk):
        hi = min(n, lo + cfg.chunk)
        t, deltas = sample_along_rays(hi - lo, cfg.near, cfg.far, cfg.n_samples,
                                      jitter=cfg.jitter, rng=rng)
        out, _ = march(field, decoder, SampleBatch(origins[lo:hi], dirs[lo:hi], t, deltas),
                       cfg.background, early_stop=cfg.early_stop,
                       weight_threshold=cfg.weight_threshold)
        rgb[lo:hi], depth[lo:hi], opacity[lo:hi] = out["rgb"], out["depth"], out["opacity"]
    return rgb, depth, opacity


def render_image(field, decoder, cam, cfg=None, seed=0):
    """Render a full image. Returns ``(rgb (H, W, 3), depth (H, W), opacity (H, W))``.

    The depth map is the expected termination depth normalised by opacity,
    zero where nothing is hit. Jitter noise is drawn for the whole image from
    ``seed`` in pixel order, so chunking never changes the result.
    """
    cfg = cfg or RenderConfig()
    origins, dirs = generate_rays(cam, pixel_grid(cam))
    rng = np.random.default_rng(seed) if cfg.jitter else None
    rgb, depth, opacity = render_rays(field, decoder, origins, dirs, cfg, rng)
    shape = (cam.height, cam.width)
    return (np.clip(rgb, 0.0, 1.0).reshape(shape + (3,)),
            normalized_depth(depth, opacity).reshape(shape), opacity.reshape(shape))


@dataclass
class RadianceModel:
    """A trained field, its decoder and the render settings used in training."""

    field: object
    decoder: Decoder
    render_config: RenderConfig = dc_field(default_factory=RenderConfig)

    def render(self, cam, seed=0):
        return render_image(self.field, self.decoder, cam, self.render_config, seed)

    @property
    def params(self):
        return {**self.field.params, **self.decoder.params}
