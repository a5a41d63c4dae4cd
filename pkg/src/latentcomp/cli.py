"""``latentcomp`` command line.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 missing input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .compose import CONFIG_FIELDS, PRESETS, CompositionConfig, compose_run
from .config import coerce, normalize_key, parse_config
from .core import digest
from .energy import gradient_check
from .errors import CompositionError, ConfigError
from .imageio import atomic_write_bytes, read_mask, read_ppm, write_mask, write_ppm
from .masks import Box, build_mask_set, place_object
from .models import AnalyticDenoiser, GaussianMixtureModel, LinearAutoencoder, toy_bundle
from .models.data import load_dataset, make_toy_domains, save_dataset
from .models.trained import TrainConfig, load_weights, save_weights, train_toy_denoiser
from .schedule import KINDS, build_schedule
from .solver import invert_trajectory, sample_trajectory

log = logging.getLogger("latentcomp")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
ABLATE_COLUMNS = ("sweep_key", "sweep_value", "sample_id", "ssim_bg", "ssim_fg", "content_similarity",
                  "style_proxy", "saturation_gap", "config_digest")
METRICS_COLUMNS = ("sample_id", "ssim_bg", "ssim_fg", "content_similarity", "style_proxy", "config_digest")


class MissingInput(Exception):
    pass


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"no such file: {p}")
    return p


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode()


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def config_digest(cfg: CompositionConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --- backends -----------------------------------------------------------------

def _fitted_gaussian(latents) -> AnalyticDenoiser:
    """Isotropic Gaussian with per-channel mean, fitted to the given latents."""
    lat = np.stack([np.asarray(z, dtype=np.float64) for z in latents])
    mean = np.broadcast_to(lat.mean(axis=(0, 2, 3))[:, None, None], lat.shape[1:]).copy()
    std = float(np.sqrt(np.mean((lat - mean) ** 2))) or 1.0
    return AnalyticDenoiser(GaussianMixtureModel.single(mean, std))


def make_bundle(weights, image_shape, fit_images=()):
    """Trained toy denoiser when ``weights`` is given, else a Gaussian fitted to ``fit_images``."""
    if weights:
        den = load_weights(_require(weights))
        return toy_bundle(den, image_shape=image_shape, name="toy-trained"), {
            "weights": str(weights), "weights_sha256": hashlib.sha256(Path(weights).read_bytes()).hexdigest()}
    ae = LinearAutoencoder()
    den = _fitted_gaussian([ae.encode(x) for x in fit_images])
    return toy_bundle(den, image_shape=image_shape, name="analytic-fitted"), {"weights": None}


# --- argument plumbing -------------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.lower().replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    g = p.add_argument_group("composition settings (override --config)")
    for name, kind in CONFIG_FIELDS.items():
        flags = [_flag(name)] + ([f"--{name}"] if name in ("T", "N") else [])
        if kind == "bool":
            g.add_argument(*flags, dest=f"cfg_{name}", action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(*flags, dest=f"cfg_{name}", default=None, metavar=kind.upper())


def _config_from_args(args, **extra) -> tuple[CompositionConfig, dict]:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    overrides["preset"] = args.preset
    overrides.update(extra)
    if args.config:
        _require(args.config)
    return parse_config(args.config, overrides)


# --- subcommands ------------------------------------------------------------------

def cmd_compose(args) -> int:
    cfg, paths = _config_from_args(args, bg=args.bg, fg=args.fg, obj_mask=args.obj_mask,
                                   user_box=args.user_box, prompt=args.prompt, out=args.out,
                                   weights=args.weights)
    for key in ("bg", "fg", "obj_mask", "user_box", "prompt", "out"):
        if not paths.get(key):
            raise ConfigError(key, "required (flag or config file)")
    x_bg = read_ppm(_require(paths["bg"]))
    x_fg = read_ppm(_require(paths["fg"]))
    obj = read_mask(_require(paths["obj_mask"]))
    box = Box.parse(paths["user_box"])
    canvas = x_bg.shape[1:]
    box.check(canvas)
    fg_aligned, _ = place_object(x_fg, obj, box, canvas)
    bundle, backend = make_bundle(paths.get("weights"), x_bg.shape, (x_bg, fg_aligned))

    result = compose_run(x_bg, x_fg, obj, box, paths["prompt"], cfg, bundle)
    out = Path(paths["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "result.ppm", result.image)
    write_mask(out / "user_mask.pgm", result.masks.user)
    write_mask(out / "object_mask.pgm", result.masks.object)
    manifest = dict(result.manifest)
    manifest["backend"] = backend
    manifest["files"] = {"result": "result.ppm", "result_sha256": hashlib.sha256(
        (out / "result.ppm").read_bytes()).hexdigest()}
    manifest["version"] = __version__
    atomic_write_bytes(out / "manifest.json", _json_bytes(manifest))
    print(f"wrote {out / 'result.ppm'}  manifest_digest={manifest['manifest_digest'][:16]}")
    return EXIT_OK


def cmd_invert(args) -> int:
    x = read_ppm(_require(args.image))
    if args.backend == "toy" and not args.weights:
        raise ConfigError("weights", "backend 'toy' needs --weights")
    bundle, backend = make_bundle(args.weights if args.backend == "toy" else None, x.shape, (x,))
    s = build_schedule(args.T, args.schedule_kind)
    z0 = bundle.autoencoder.encode(x)
    report = {"image": str(args.image), "backend": backend, "T": args.T, "schedule_kind": args.schedule_kind,
              "runs": []}
    for iters in sorted({0, args.inversion_iters}):
        traj = invert_trajectory(z0, bundle.denoiser, None, s, iters)
        rec = sample_trajectory(traj[-1], bundle.denoiser, None, s, 1)
        err = float(np.linalg.norm(rec - z0) / max(np.linalg.norm(z0), 1e-300))
        report["runs"].append({"inversion_iters": iters, "relative_error": err,
                               "zT_std": float(np.std(traj[-1])), "zT_digest": digest(traj[-1])})
        print(f"inversion_iters={iters}  relative_error={err:.3e}")
    if args.out:
        atomic_write_bytes(Path(args.out), _json_bytes(report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    shape = (3, args.size, args.size)
    if args.weights:
        bundle, _ = make_bundle(args.weights, shape)
    else:
        rng = np.random.default_rng(args.seed)
        bundle, _ = make_bundle(None, shape, [rng.uniform(size=shape) for _ in range(4)])
    s = build_schedule(args.T, args.schedule_kind)
    worst = 0.0
    print(f"{'case':>5} {'index':>5} {'rel_err_semantic':>17} {'rel_err_style':>14}")
    for c in gradient_check(bundle, s, args.cases, args.seed):
        flag = "" if c.rel_err <= GRADCHECK_TOL else "  FAIL"
        print(f"{c.case:5d} {c.index:5d} {c.rel_err_semantic:17.3e} {c.rel_err_style:14.3e}{flag}")
        worst = max(worst, c.rel_err)
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_RUNTIME


def _dataset_arg(path):
    p = _require(path)
    if not (p / "dataset.json").exists() and p.name != "dataset.json":
        raise MissingInput(f"{p} has no dataset.json")
    return load_dataset(p)


def _parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError("sweep", f"expected key=v1,v2,..., got {text!r}")
    key, values = text.split("=", 1)
    key = normalize_key(key)
    if key not in CONFIG_FIELDS:
        raise ConfigError(key, "unknown sweep key")
    return key, [coerce(key, v) for v in values.split(",") if v.strip()]


def _run_sample(smp, cfg, bundle, out_dir: Path | None):
    res = compose_run(smp.background, smp.foreground, smp.object_mask, smp.user_box, smp.prompt, cfg, bundle)
    rep = metrics.evaluate(res.image, smp.background, res.fg_aligned, res.masks)
    gap = abs(metrics.saturation(res.image, res.masks.object) - metrics.saturation(smp.background, res.masks.background))
    if out_dir is not None:
        d = out_dir / smp.id
        d.mkdir(parents=True, exist_ok=True)
        write_ppm(d / "result.ppm", res.image)
        atomic_write_bytes(d / "manifest.json", _json_bytes(res.manifest))
    return rep, gap


def _training_images(ds):
    for smp in ds:
        yield smp.background
        yield place_object(smp.foreground, smp.object_mask, smp.user_box, smp.background.shape[1:])[0]


def cmd_ablate(args) -> int:
    base, _ = _config_from_args(args)
    key, values = _parse_sweep(args.sweep)
    ds = _dataset_arg(args.dataset)
    shape = ds[0].background.shape
    bundle, backend = make_bundle(args.weights, shape, list(_training_images(ds)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        kw = {key: v}
        if key == "T_prime":
            kw["tau"] = min(base.tau, v)  # window cannot reach past the start index
        cfg = base.with_(**kw)
        cdig = config_digest(cfg)
        sub = out / f"{key}={v}" if args.save_images else None
        log.info("%s=%s on %d samples", key, v, len(ds))
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(lambda smp: _run_sample(smp, cfg, bundle, sub), ds))
        for smp, (rep, gap) in zip(ds, results):
            rows.append((key, v, smp.id, rep.ssim_bg, rep.ssim_fg, rep.content_similarity, rep.style_proxy, gap, cdig))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATE_COLUMNS)
    w.writerows(rows)
    atomic_write_bytes(out / "ablation.csv", buf.getvalue().encode())
    atomic_write_bytes(out / "ablation.json", _json_bytes({
        "sweep": {"key": key, "values": values}, "base_config": base.to_dict(), "backend": backend,
        "dataset_seed": ds.seed, "dataset_digest": ds.digest(), "rows": len(rows)}))
    for v in values:
        sel = [r for r in rows if r[1] == v]
        print(f"{key}={v}: content_similarity={np.mean([r[5] for r in sel]):.4f} "
              f"style_proxy={np.mean([r[6] for r in sel]):.4f}")
    print(f"wrote {out / 'ablation.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    ds = _dataset_arg(args.dataset) if args.dataset else make_toy_domains(args.seed, args.n)
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, lr=args.lr, hidden=args.hidden, depth=args.depth)
    result = train_toy_denoiser(ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(result.denoiser, out)
    atomic_write_bytes(out.with_name(out.name + ".json"), _json_bytes({
        "train_config": vars(cfg), "dataset_digest": ds.digest(), "dataset_seed": ds.seed, "n": len(ds),
        "final_loss": result.losses[-1], "weights_sha256": hashlib.sha256(out.read_bytes()).hexdigest()}))
    print(f"wrote {out}  final loss {result.losses[-1]:.4f}")
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    path = save_dataset(make_toy_domains(args.seed, args.n), args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    ds = _dataset_arg(args.dataset)
    root = _require(args.results)
    rows = []
    for smp in ds:
        img_path = root / smp.id / "result.ppm"
        if not img_path.exists():
            log.warning("no result for %s", smp.id)
            continue
        manifest = json.loads((root / smp.id / "manifest.json").read_text())
        cfg = CompositionConfig(**manifest["config"])
        canvas = smp.background.shape[1:]
        fg_aligned, obj_aligned = place_object(smp.foreground, smp.object_mask, smp.user_box, canvas)
        masks = build_mask_set(smp.user_box.mask(canvas), obj_aligned, manifest.get("latent_factor", 2), cfg.dilation)
        rep = metrics.evaluate(read_ppm(img_path), smp.background, fg_aligned, masks)
        rows.append((smp.id, rep.ssim_bg, rep.ssim_fg, rep.content_similarity, rep.style_proxy, config_digest(cfg)))
    if not rows:
        raise MissingInput(f"no <sample>/result.ppm found under {root}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    w.writerows(rows)
    if args.out:
        atomic_write_bytes(Path(args.out), buf.getvalue().encode())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latentcomp", description="Training-free latent image composition (toy scale).")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="compose one foreground object into a background")
    p.add_argument("--bg")
    p.add_argument("--fg")
    p.add_argument("--obj-mask")
    p.add_argument("--user-box", help="x,y,w,h in background pixels")
    p.add_argument("--prompt")
    p.add_argument("--out", help="output directory")
    p.add_argument("--weights", help="trained toy denoiser (default: fitted Gaussian prior)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("invert", help="inversion round-trip report for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--backend", choices=("analytic", "toy"), default="analytic")
    p.add_argument("--weights")
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--schedule-kind", choices=KINDS, default="cosine")
    p.add_argument("--inversion-iters", type=int, default=3)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference energy gradients")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16, help="square image size of the check cases")
    p.add_argument("--weights")
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--schedule-kind", choices=KINDS, default="cosine")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="sweep one setting over a dataset and write a metrics CSV")
    p.add_argument("--sweep", required=True, help="e.g. t-prime=16,12,8,4")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--save-images", action="store_true", help="also write <value>/<sample>/result.ppm")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("train-toy", help="train the toy convolutional denoiser")
    p.add_argument("--dataset", help="dataset directory (default: generate from --seed/--n)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--hidden", type=int, default=TrainConfig.hidden)
    p.add_argument("--depth", type=int, default=TrainConfig.depth)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("make-dataset", help="write the synthetic two-domain dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("metrics", help="content similarity and style proxy for saved results")
    p.add_argument("--results", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (CompositionError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
