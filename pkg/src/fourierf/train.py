"""Curriculum training loop with AdamW.

Each iteration ``t = 1..N``:

1. ``f_t`` is read from the linear schedule;
2. every spatial factor is projected onto its ``f_t`` low-pass band;
3. a ray batch is drawn uniformly (with replacement) from all training pixels;
4. loss and gradients are computed on the projected parameters;
5. AdamW updates the parameters.

After the loop the parameters are projected once more at the last ``f_t``.
"""

from dataclasses import asdict, dataclass, field as dc_field, fields
import csv
import io
import logging
from pathlib import Path
import time

import numpy as np

from ._validation import check_nonnegative
from .field import DEFAULT_DENSITY_SHIFT, CPField, GridDims, VMField
from .grad import LossConfig, NonFiniteError, assign_params, loss_and_grad, param_set
from .losses import (l1_loss, occlusion_reg, scale_grads_by_distance,  # noqa: F401
                     tv_loss)
from .metrics import evaluate_images
from .render import BLACK, WHITE, Decoder, RadianceModel, RenderConfig, SampleBatch, \
    generate_rays, pixel_grid, sample_along_rays
from .spectra import ClipSchedule, clip_field_, schedule_value

logger = logging.getLogger(__name__)

PRESETS = {
    "synthetic": dict(weight_decay=0.2, w_tv=1.0, w_l1=0.0, w_occ=0.0, f0=0.3, delta=2e-3,
                      background="white"),
    "real": dict(weight_decay=0.0, w_tv=1.0, w_l1=1e-4, w_occ=0.01, f0=0.01, delta=1e-4,
                 background="black"),
}


@dataclass
class TrainConfig:
    iterations: int = 10_000
    batch_size: int = 4096
    lr_field: float = 0.02
    lr_network: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.2
    w_tv: float = 1.0
    tv_matrix_scale: float = 1e-2
    tv_vector_scale: float = 1e-3
    w_l1: float = 0.0
    w_occ: float = 0.0
    occ_bins: int = 10
    grad_scaling: bool = False
    near_scale: float = 0.0  # 0 means "use the near plane"
    f0: float = 0.3
    delta: float = 2e-3
    curriculum: bool = True
    seed: int = 0
    preset: str = "synthetic"
    decomp: str = "vm"
    grid: int = 32
    density_ranks: tuple = (4, 4, 4)
    app_ranks: tuple = (4, 4, 4)
    cp_density_rank: int = 16
    cp_app_rank: int = 16
    app_dim: int = 27
    hidden: int = 64
    use_viewdirs: bool = False
    init_std: float = 0.1
    density_shift: float = DEFAULT_DENSITY_SHIFT
    near: float = 2.0
    far: float = 6.0
    n_samples: int = 128
    jitter: bool = True
    early_stop: float = 1e-4
    weight_threshold: float = 1e-4
    background: str = "white"
    eval_every: int = 500
    checkpoint_every: int = 1000

    def __post_init__(self):
        for name in ("lr_field", "lr_network", "weight_decay", "w_tv", "w_l1", "w_occ",
                     "eps", "near_scale", "tv_matrix_scale", "tv_vector_scale", "early_stop",
                     "weight_threshold"):
            check_nonnegative(getattr(self, name), name)
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {getattr(self, name)!r}")
        if not 0 <= self.f0 <= 1:
            raise ValueError(f"f0 must lie in [0, 1], got {self.f0!r}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta!r}")
        if self.decomp not in ("cp", "vm"):
            raise ValueError(f"decomp must be 'cp' or 'vm', got {self.decomp!r}")
        if self.background not in ("white", "black"):
            raise ValueError(f"background must be 'white' or 'black', got {self.background!r}")
        self.density_ranks = tuple(int(r) for r in self.density_ranks)
        self.app_ranks = tuple(int(r) for r in self.app_ranks)

    @classmethod
    def from_preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(preset=name, **{**PRESETS[name], **overrides})

    @property
    def schedule(self):
        return ClipSchedule(self.f0 if self.curriculum else 1.0, self.delta, self.iterations)

    @property
    def background_rgb(self):
        return WHITE if self.background == "white" else BLACK

    def loss_config(self):
        return LossConfig(w_tv=self.w_tv, tv_matrix_scale=self.tv_matrix_scale,
                          tv_vector_scale=self.tv_vector_scale, w_l1=self.w_l1,
                          w_occ=self.w_occ,
                          occ_bins=self.occ_bins, grad_scaling=self.grad_scaling,
                          near_scale=self.near_scale or self.near,
                          background=self.background_rgb, early_stop=self.early_stop,
                          weight_threshold=self.weight_threshold)

    def render_config(self):
        return RenderConfig(self.near, self.far, self.n_samples, self.background_rgb,
                            jitter=False, early_stop=self.early_stop,
                            weight_threshold=self.weight_threshold)

    def to_dict(self):
        d = asdict(self)
        d["density_ranks"] = list(self.density_ranks)
        d["app_ranks"] = list(self.app_ranks)
        return d


# -- config files ---------------------------------------------------------

def _parse_value(kind, text):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is tuple:
        return tuple(int(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip())
    return text


_FIELD_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` starts a comment) into typed overrides."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _parse_value(_FIELD_TYPES[key], value)
    return out


def load_config(path=None, preset=None, **overrides):
    """Resolve a config: preset defaults, then file values, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    preset = preset or values.pop("preset", None) or "synthetic"
    values.pop("preset", None)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_preset(preset, **values)


def format_config(cfg):
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# -- optimiser ------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)
    step: int = 0


def adamw_step(params, grads, state, lr, beta1=0.9, beta2=0.98, eps=1e-8, weight_decay=0.0):
    """One AdamW update. ``lr`` is a float or a ``{name: lr}`` mapping.

    Returns the new parameter dict; ``state`` is updated in place.
    """
    if set(params) != set(grads):
        raise ValueError("params and grads must have the same keys")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {np.shape(p)}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        step_lr = lr[name] if isinstance(lr, dict) else lr
        update = (m / bc1) / (np.sqrt(v / bc2) + eps) + weight_decay * p
        out[name] = p - step_lr * update
    return out


# -- log ------------------------------------------------------------------

@dataclass
class TrainLog:
    records: list = dc_field(default_factory=list)
    evals: list = dc_field(default_factory=list)

    @property
    def losses(self):
        return [r["loss"] for r in self.records]

    @property
    def fractions(self):
        return [r["f"] for r in self.records]

    def to_csv(self):
        buf = io.StringIO()
        cols = ["iter", "f", "loss", "mse", "tv", "l1", "occ", "ms"]
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", restval=0.0,
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.records)
        return buf.getvalue()

    def evals_csv(self):
        lines = ["iter,psnr,ssim"] + [f"{e['iter']},{e['psnr']:.6f},{e['ssim']:.6f}"
                                       for e in self.evals]
        return "\n".join(lines) + "\n"

    def summary(self):
        if not self.records:
            return "no iterations run\n"
        last = self.records[-1]
        text = (f"iterations: {last['iter']}\nfinal f: {last['f']:.6f}\n"
                f"final loss: {last['loss']:.6g}\nfinal mse: {last['mse']:.6g}\n"
                f"mean iteration time: {np.mean([r['ms'] for r in self.records]):.2f} ms\n")
        if self.evals:
            e = self.evals[-1]
            text += f"last eval (iter {e['iter']}): PSNR {e['psnr']:.4f} dB, SSIM {e['ssim']:.4f}\n"
        return text


# -- model construction ---------------------------------------------------

def init_model(cfg, aabb=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))):
    dims = GridDims.cube(cfg.grid, *aabb)
    if cfg.decomp == "vm":
        field = VMField.random(dims, cfg.density_ranks, cfg.app_ranks, cfg.app_dim,
                               std=cfg.init_std, seed=cfg.seed,
                               density_shift=cfg.density_shift)
    else:
        field = CPField.random(dims, cfg.cp_density_rank, cfg.cp_app_rank, cfg.app_dim,
                               std=cfg.init_std, seed=cfg.seed,
                               density_shift=cfg.density_shift)
    decoder = Decoder.random(cfg.app_dim, cfg.hidden, cfg.use_viewdirs, seed=cfg.seed + 1)
    return RadianceModel(field, decoder, cfg.render_config())


def _learning_rates(cfg, params):
    return {name: cfg.lr_network if (name.startswith("decoder.") or name.endswith(".basis"))
            else cfg.lr_field for name in params}


def _gather_rays(dataset):
    origins, dirs, colors = [], [], []
    for cam, img in zip(dataset.cameras, dataset.images):
        o, d = generate_rays(cam, pixel_grid(cam))
        origins.append(o)
        dirs.append(d)
        colors.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    return np.concatenate(origins), np.concatenate(dirs), np.concatenate(colors)


def evaluate_model(model, dataset):
    renders = [model.render(cam)[0] for cam in dataset.cameras]
    return evaluate_images(renders, dataset.images)


def train(dataset, cfg, out_dir=None, model=None, callback=None):
    """Fit a radiance model to the ``train`` split of ``dataset``.

    Returns ``(model, log)``. With ``out_dir`` set, checkpoints go to
    ``out_dir/checkpoints`` and the log to ``out_dir/logs``.
    """
    from .checkpoint import save_checkpoint

    train_set = dataset.train
    if len(train_set) < 1:
        raise ValueError("dataset has no training views")
    test_set = dataset.test
    rng = np.random.default_rng(cfg.seed)
    model = model or init_model(cfg)
    field, decoder = model.field, model.decoder
    loss_cfg = cfg.loss_config()
    schedule = cfg.schedule
    state = OptimizerState()
    lrs = _learning_rates(cfg, param_set(field, decoder))
    origins, dirs, colors = _gather_rays(train_set)
    log = TrainLog()
    ckpt_dir = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    f_t = 1.0
    for it in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        if cfg.curriculum:
            f_t = schedule_value(schedule, it)
            clip_field_(field, f_t)
        idx = rng.integers(0, len(origins), size=cfg.batch_size)
        t, deltas = sample_along_rays(cfg.batch_size, cfg.near, cfg.far, cfg.n_samples,
                                      jitter=cfg.jitter, rng=rng)
        batch = SampleBatch(origins[idx], dirs[idx], t, deltas)
        try:
            loss, grads, terms = loss_and_grad(field, decoder, batch, colors[idx], loss_cfg)
        except NonFiniteError:
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / "last_good.ffr", model, {"iter": it - 1})
            logger.error("non-finite loss at iteration %d", it)
            raise
        new = adamw_step(param_set(field, decoder), grads, state, lrs, cfg.adam_beta1,
                         cfg.adam_beta2, cfg.eps, cfg.weight_decay)
        assign_params(field, decoder, new)
        record = {"iter": it, "f": f_t, "loss": loss, "ms": 1e3 * (time.perf_counter() - start)}
        record.update(terms)
        log.records.append(record)
        if callback is not None:
            callback(it, model, record)
        if cfg.eval_every and it % cfg.eval_every == 0 and len(test_set):
            report = evaluate_model(model, test_set)
            log.evals.append({"iter": it, "psnr": report.mean_psnr, "ssim": report.mean_ssim})
            logger.info("iter %d  f=%.4f  loss=%.5f  test PSNR %.3f", it, f_t, loss,
                        report.mean_psnr)
        if ckpt_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt_dir / f"iter_{it:06d}.ffr", model, {"iter": it})

    if cfg.curriculum:
        clip_field_(field, f_t)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / "final.ffr", model, {"iter": cfg.iterations})
        logs = Path(out_dir) / "logs"
        logs.mkdir(exist_ok=True)
        (logs / "train_log.csv").write_text(log.to_csv())
        (logs / "eval_log.csv").write_text(log.evals_csv())
        (logs / "summary.txt").write_text(log.summary())
    return model, log


__all__ = ["TrainConfig", "PRESETS", "OptimizerState", "TrainLog", "adamw_step", "train",
           "init_model", "load_config", "parse_config_text", "format_config", "tv_loss",
           "l1_loss", "occlusion_reg", "scale_grads_by_distance", "evaluate_model"]
