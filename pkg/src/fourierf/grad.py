"""Training loss and its exact gradient for a batch of rays.

Gradients are hand-derived adjoints of the render pipeline: trilinear factor
interpolation, softplus density, the two-layer decoder and front-to-back
compositing. The Fourier clip is a projection applied to the parameters
before the forward pass and is deliberately not part of this graph.
"""

from dataclasses import dataclass

import numpy as np

from .field import density_activation_grad
from .losses import (distance_scale, l1_grad, mse_loss, occlusion_grad, tv_grad)
from .render import WHITE, march


class NonFiniteError(FloatingPointError):
    """Raised when a loss, parameter or gradient stops being finite."""

    def __init__(self, message, array_name=None):
        super().__init__(message)
        self.array_name = array_name


@dataclass
class LossConfig:
    w_tv: float = 0.0
    # Per-factor TV scales inside the objective (TensoRF's regulariser convention).
    tv_matrix_scale: float = 1.0
    tv_vector_scale: float = 1.0
    w_l1: float = 0.0
    w_occ: float = 0.0
    occ_bins: int = 10
    w_mse: float = 1.0
    grad_scaling: bool = False
    near_scale: float = 2.0
    background: tuple = WHITE
    early_stop: float = 0.0
    weight_threshold: float = 0.0


def param_set(field, decoder):
    """All trainable arrays in stable order: field factors, basis, decoder."""
    return {**field.params, **decoder.params}


def assign_params(field, decoder, params):
    for name, value in params.items():
        if name.startswith("decoder."):
            setattr(decoder, name.split(".", 1)[1], value)
        else:
            field.params[name] = value


def n_params(params):
    return sum(np.asarray(v).size for v in params.values())


def _first_nonfinite(arrays):
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            return name
    return None


def loss_and_grad(field, decoder, batch, target_rgb, cfg=None):
    """Weighted training loss and gradients for every trainable array.

    Returns ``(loss, grads, terms)`` where ``terms`` holds the unweighted
    per-term values.
    """
    cfg = cfg or LossConfig()
    out, cache = march(field, decoder, batch, cfg.background, early_stop=cfg.early_stop,
                       weight_threshold=cfg.weight_threshold)
    params = param_set(field, decoder)
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    terms = {}

    mse, g_pix = mse_loss(out["rgb"], target_rgb)
    terms["mse"] = mse
    g_pix = cfg.w_mse * g_pix

    w, trans, c = out["weights"], out["trans"], cache["rgb"]
    trans_next = trans - w
    wc = w[..., None] * c
    # colour accumulated strictly behind each sample, background included
    behind = (np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc
              + out["trans_final"][:, None, None] * cache["background"])
    g_tau = np.einsum("bc,bsc->bs", g_pix, trans_next[..., None] * c - behind)
    g_sigma = g_tau * batch.deltas
    g_c = w[..., None] * g_pix[:, None, :]

    if cfg.w_occ > 0:
        occ, g_occ = occlusion_grad(cache["sigma"], cfg.occ_bins)
        g_sigma = g_sigma + cfg.w_occ * g_occ
    else:
        occ = 0.0
    terms["occ"] = occ

    if cfg.grad_scaling:
        scale = distance_scale(batch.t, cfg.near_scale)
        g_sigma = g_sigma * scale
        g_c = g_c * scale[..., None]

    inside, active = cache["inside"], cache["active"]
    g_raw = g_sigma.ravel()[inside] * density_activation_grad(cache["raw"] + field.density_shift)
    for name, g in field._backward(cache["dcache"], g_raw).items():
        grads[name] += g
    dec_grads, g_app = decoder.backward(cache["rcache"], g_c.reshape(-1, 3)[active])
    for name, g in dec_grads.items():
        grads[name] += g
    for name, g in field._backward(cache["acache"], g_app).items():
        grads[name] += g

    loss = cfg.w_mse * mse + cfg.w_occ * occ
    if cfg.w_tv > 0:
        tv, g_tv = tv_grad(field, cfg.tv_matrix_scale, cfg.tv_vector_scale)
        for name, g in g_tv.items():
            grads[name] += cfg.w_tv * g
        loss += cfg.w_tv * tv
        terms["tv"] = tv
    if cfg.w_l1 > 0:
        l1, g_l1 = l1_grad(field)
        for name, g in g_l1.items():
            grads[name] += cfg.w_l1 * g
        loss += cfg.w_l1 * l1
        terms["l1"] = l1

    if not np.isfinite(loss):
        bad = _first_nonfinite(params) or _first_nonfinite(grads) or "loss"
        raise NonFiniteError(f"non-finite loss {loss!r}; first offending array: {bad}", bad)
    bad = _first_nonfinite(grads)
    if bad is not None:
        raise NonFiniteError(f"non-finite gradient in {bad}", bad)
    return float(loss), grads, terms


def fd_check(field, decoder, batch, target_rgb, cfg=None, k=64, rng=None, h=1e-4,
             abs_floor=1e-7):
    """Compare analytic gradients to central differences at ``k`` random coordinates.

    Returns the maximum relative error. A probe passes outright when both the
    analytic and numerical derivatives are below ``abs_floor`` in magnitude.
    """
    if k == 0:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads, _ = loss_and_grad(field, decoder, batch, target_rgb, cfg)
    params = param_set(field, decoder)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    flat_ids = rng.choice(sizes.sum(), size=min(k, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fid in flat_ids:
        which = int(np.searchsorted(offsets, fid, side="right") - 1)
        name, local = names[which], int(fid - offsets[which])
        arr = params[name].reshape(-1)
        orig = arr[local]
        arr[local] = orig + h
        plus = loss_and_grad(field, decoder, batch, target_rgb, cfg)[0]
        arr[local] = orig - h
        minus = loss_and_grad(field, decoder, batch, target_rgb, cfg)[0]
        arr[local] = orig
        numeric = (plus - minus) / (2.0 * h)
        analytic = grads[name].reshape(-1)[local]
        scale = max(abs(numeric), abs(analytic))
        if scale == 0.0 or scale < abs_floor:
            continue
        worst = max(worst, abs(numeric - analytic) / scale)
    return worst
