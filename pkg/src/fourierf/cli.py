"""Command line front end: ``fourierf <command> [options]``.

Commands::

    make-scene        mint a few-shot dataset from a scene spec (or the built-in two spheres)
    train             train a model on a dataset directory
    render            render test views from a checkpoint
    eval              score renders against ground-truth images
    ablate-delta      sweep the schedule slope and report held-out PSNR
    check-grads       finite-difference gradient check on a small problem
    inspect-spectrum  retained spectral energy of every factor of a checkpoint

``FOURIERF_THREADS`` caps BLAS/FFT worker threads (0 or unset means one).
"""

import argparse
import json
import logging
import math
import os
from pathlib import Path
import platform
import sys

import numpy as np
from PIL import Image

from . import __version__
from .checkpoint import load_checkpoint
from .data import (SpecError, SyntheticSceneSpec, load_png, load_transforms, make_fewshot,
                   save_png, two_sphere_scene, write_transforms)
from .field import GridDims, VMField
from .grad import LossConfig, fd_check
from .metrics import evaluate_images, floater_score
from .render import Decoder, Camera, look_at, sample_along_rays, SampleBatch, generate_rays, \
    pixel_grid
from .spectra import retained_energy_ratio
from .train import PRESETS, evaluate_model, format_config, load_config, train

logger = logging.getLogger("fourierf")


def _threads():
    raw = os.environ.get("FOURIERF_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"FOURIERF_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def _write_manifest(out, command, args, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    # no timestamps: rerunning a command must reproduce its outputs byte for byte
    doc = {"command": command, "version": __version__,
           "args": {k: v for k, v in vars(args).items() if k != "func"},
           "python": platform.python_version(), "numpy": np.__version__,
           "threads": _threads(),
           "layout": {"checkpoints": "checkpoints/", "renders": "renders/", "logs": "logs/"}}
    doc.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, default=str))


def _overrides(args):
    keys = {"seed": "seed", "iters": "iterations", "f0": "f0", "delta": "delta",
            "decomp": "decomp", "grid": "grid", "batch": "batch_size",
            "samples": "n_samples"}
    out = {dst: getattr(args, src) for src, dst in keys.items()
           if getattr(args, src, None) is not None}
    if getattr(args, "no_curriculum", False):
        out["curriculum"] = False
        out["f0"] = 1.0
    rank = getattr(args, "rank", None)
    if rank is not None:
        out["density_ranks"] = out["app_ranks"] = (rank,) * 3
        out["cp_density_rank"] = out["cp_app_rank"] = rank
    return out


def _config(args, **extra):
    return load_config(args.config, args.preset, **{**_overrides(args), **extra})


def _load_dataset(path, cfg, views=None):
    ds = load_transforms(path, background=cfg.background_rgb)
    if views is not None:
        ds = make_fewshot(ds, views, n_test=len(ds.test))
    return ds


def _save_depth(path, depth, far):
    scale = far / 65535.0
    arr = np.round(np.clip(depth / scale, 0, 65535)).astype(np.uint16)
    Image.fromarray(arr).save(path)
    Path(str(path) + ".json").write_text(json.dumps({"scale": scale, "units": "world"}))


# -- commands -------------------------------------------------------------

def cmd_make_scene(args):
    spec = SyntheticSceneSpec.load(args.spec) if args.spec else two_sphere_scene()
    out = Path(args.out)
    ds = make_fewshot(spec, args.views, args.n_test, seed=args.seed or 0, width=args.size,
                      height=args.size, n_samples=args.samples)
    write_transforms(ds, out)
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2))
    _write_manifest(out, "make-scene", args, {"n_train": len(ds.train), "n_test": len(ds.test)})
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test views to {out}")


def cmd_train(args):
    cfg = _config(args)
    ds = _load_dataset(args.data, cfg, args.views)
    out = Path(args.out)
    _write_manifest(out, "train", args, {"config": cfg.to_dict()})
    (out / "config.txt").write_text(format_config(cfg))
    model, log = train(ds, cfg, out_dir=out)
    print(log.summary(), end="")
    scene = Path(args.data) / "scene.json"
    if scene.exists():
        score = floater_score(model.field, SyntheticSceneSpec.load(scene))
        print(f"floater score: {score:.6f}")


def cmd_render(args):
    model, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    renders = out / "renders"
    renders.mkdir(parents=True, exist_ok=True)
    if args.data:
        ds = load_transforms(args.data, model.render_config.background)
        cams = ds.split(args.split).cameras
    else:
        cams = []
        for q in range(args.n_views):
            az = 2 * math.pi * q / args.n_views
            eye = 4.0 * np.array([math.cos(az) * math.cos(0.5), math.sin(az) * math.cos(0.5),
                                  math.sin(0.5)])
            cams.append(Camera.from_fov(0.6911112070083618, args.size, args.size, look_at(eye)))
    for n, cam in enumerate(cams):
        rgb, depth, _ = model.render(cam)
        save_png(renders / f"r_{n}.png", rgb)
        _save_depth(renders / f"r_{n}_depth.png", depth, model.render_config.far)
    _write_manifest(out, "render", args, {"n_views": len(cams)})
    print(f"rendered {len(cams)} views to {renders}")


def cmd_eval(args):
    pred_dir = Path(args.renders)
    ds = load_transforms(args.data, splits=(args.split,))
    sub = ds.split(args.split)
    preds = sorted((p for p in pred_dir.glob("r_*.png") if not p.stem.endswith("_depth")),
                   key=lambda p: int(p.stem.split("_")[1]))
    if len(preds) != len(sub):
        have = {p.stem for p in preds}
        want = {f"r_{n}" for n in range(len(sub))}
        raise ValueError(f"image count mismatch: {len(preds)} renders in {pred_dir} vs "
                         f"{len(sub)} ground-truth '{args.split}' views; missing: "
                         f"{sorted(want - have) or '-'}; unexpected: {sorted(have - want) or '-'}")
    report = evaluate_images([load_png(p, ds.background) for p in preds], sub.images,
                             [p.stem for p in preds])
    if args.checkpoint and (Path(args.data) / "scene.json").exists():
        model, _ = load_checkpoint(args.checkpoint)
        report.floater = floater_score(model.field,
                                       SyntheticSceneSpec.load(Path(args.data) / "scene.json"))
    out = Path(args.out)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    (logs / "metrics.csv").write_text(report.to_csv())
    (logs / "metrics_summary.txt").write_text(report.summary())
    _write_manifest(out, "eval", args, {"mean_psnr": report.mean_psnr,
                                        "mean_ssim": report.mean_ssim})
    print(report.summary(), end="")


def _parse_deltas(text):
    return [math.inf if v.strip().lower() in ("inf", "infinity") else float(v)
            for v in text.split(",") if v.strip()]


def _score_run(dataset, cfg, spec):
    model, _ = train(dataset, cfg)
    report = evaluate_model(model, dataset.test)
    row = {"psnr": report.mean_psnr, "ssim": report.mean_ssim}
    if spec is not None:
        row["floater"] = floater_score(model.field, spec)
    return row


def ablate_delta(dataset, deltas, spec=None, baseline=True, **overrides):
    """One curriculum run per slope, plus a no-curriculum baseline.

    Returns ``(rows, baseline_row)``; each row holds ``delta``, ``psnr``,
    ``ssim`` and, given a spec, ``floater``.
    """
    preset = overrides.pop("preset", None)
    overrides.pop("curriculum", None)
    base = None
    if baseline:
        cfg = load_config(None, preset, **{**overrides, "curriculum": False, "f0": 1.0})
        base = {"delta": "baseline", **_score_run(dataset, cfg, spec)}
        logger.info("baseline  PSNR %.3f", base["psnr"])
    rows = []
    for d in deltas:
        cfg = load_config(None, preset, **{**overrides, "delta": d})
        rows.append({"delta": d, **_score_run(dataset, cfg, spec)})
        logger.info("delta=%s  PSNR %.3f", d, rows[-1]["psnr"])
    return rows, base


def cmd_ablate_delta(args):
    cfg = _config(args)
    ds = _load_dataset(args.data, cfg, args.views)
    scene = Path(args.data) / "scene.json"
    spec = SyntheticSceneSpec.load(scene) if scene.exists() else None
    overrides = {k: v for k, v in cfg.to_dict().items() if k not in ("delta", "f0")}
    overrides["f0"] = cfg.f0 if cfg.f0 < 1.0 else PRESETS[cfg.preset]["f0"]
    overrides["density_ranks"] = tuple(overrides["density_ranks"])
    overrides["app_ranks"] = tuple(overrides["app_ranks"])
    out = Path(args.out)
    _write_manifest(out, "ablate-delta", args, {"config": cfg.to_dict()})
    rows, base = ablate_delta(ds, _parse_deltas(args.deltas), spec, **overrides)
    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    cols = ["delta", "psnr", "ssim"] + (["floater"] if spec is not None else [])
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
    (logs / "ablate_delta.csv").write_text("\n".join(lines) + "\n")
    (logs / "ablate_baseline.txt").write_text(
        "".join(f"{c} = {base[c]}\n" for c in cols if c != "delta"))
    print("\n".join(lines))
    print(f"baseline (no curriculum): psnr {base['psnr']:.4f}")


def cmd_check_grads(args):
    rng = np.random.default_rng(args.seed or 0)
    dims = GridDims.cube(args.grid or 4)
    rank = args.rank or 2
    field = VMField.random(dims, (rank,) * 3, (rank,) * 3, app_dim=6, std=0.5,
                           seed=args.seed or 0, density_shift=0.0)
    decoder = Decoder.random(6, hidden=8, seed=(args.seed or 0) + 1)
    cams = [Camera.from_fov(0.9, 4, 4, look_at((3.0, 1.0, 1.5)))]
    o, d = generate_rays(cams[0], pixel_grid(cams[0]))
    t, deltas = sample_along_rays(len(o), 2.0, 5.0, 16, jitter=True, rng=rng)
    batch = SampleBatch(o, d, t, deltas)
    target = rng.uniform(size=(len(o), 3))
    terms = {"mse": LossConfig(), "tv": LossConfig(w_mse=0.0, w_tv=1.0),
             "l1": LossConfig(w_mse=0.0, w_l1=1.0), "occ": LossConfig(w_mse=0.0, w_occ=1.0,
                                                                        occ_bins=4)}
    worst = 0.0
    for name, cfg in terms.items():
        err = fd_check(field, decoder, batch, target, cfg, k=args.probes, rng=rng)
        worst = max(worst, err)
        print(f"{name:4s} max rel err {err:.3e}  {'ok' if err < args.tol else 'FAIL'}")
    if worst >= args.tol:
        raise SystemExit(1)


def cmd_inspect_spectrum(args):
    model, _ = load_checkpoint(args.checkpoint)
    field = model.field
    fs = [float(v) for v in args.fractions.split(",")]
    lines = ["factor_id,axis,f,retained_energy_ratio"]
    for name in field.factor_names():
        arr = field.params[name]
        axis = name.rsplit(".", 1)[1]
        for f in fs:
            for r, ratio in enumerate(retained_energy_ratio(arr, f)):
                lines.append(f"{name}[{r}],{axis},{f:g},{ratio:.9g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        logs = out / "logs"
        logs.mkdir(parents=True, exist_ok=True)
        (logs / "spectrum.csv").write_text(text)
        _write_manifest(out, "inspect-spectrum", args)
    else:
        sys.stdout.write(text)


# -- parser ---------------------------------------------------------------

def _common(p, training=True):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=["synthetic", "real"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/latest", help="output directory")
    if training:
        p.add_argument("--iters", type=int)
        p.add_argument("--f0", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--no-curriculum", action="store_true")
        p.add_argument("--decomp", choices=["cp", "vm"])
        p.add_argument("--grid", type=int)
        p.add_argument("--rank", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--views", type=int, help="few-shot subsample of the training split")


def build_parser():
    parser = argparse.ArgumentParser(prog="fourierf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="mint a few-shot dataset")
    _common(p, training=False)
    p.add_argument("--spec", help="scene spec JSON (default: two spheres)")
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--samples", type=int, default=512, help="oracle samples per ray")
    p.add_argument("--n-test", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("train", help="train on a dataset directory")
    _common(p)
    p.add_argument("data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="dataset directory whose cameras to render")
    p.add_argument("--split", default="test")
    p.add_argument("--n-views", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score renders against ground truth")
    p.add_argument("renders", help="directory of r_<n>.png renders")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", help="also report the floater score of this model")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-delta", help="sweep the schedule slope")
    _common(p)
    p.add_argument("data")
    p.add_argument("--deltas", default="inf,1e-2,2e-3,5e-4")
    p.set_defaults(func=cmd_ablate_delta)

    p = sub.add_parser("check-grads", help="finite-difference gradient check")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_check_grads)

    p = sub.add_parser("inspect-spectrum", help="retained spectral energy per factor")
    p.add_argument("checkpoint")
    p.add_argument("--fractions", default="0.1,0.25,0.5,0.75,1.0")
    p.add_argument("--out", help="write logs/spectrum.csv here instead of stdout")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_inspect_spectrum)
    return parser


def main(argv=None):
    from threadpoolctl import threadpool_limits

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            args.func(args)
    except (SpecError, FileNotFoundError, ValueError) as exc:
        print(f"fourierf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
