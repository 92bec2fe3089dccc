"""Command-line frontend.

Subcommands: init-weights, make-pool, select-anchors, attack, eval, gradcheck.
Exit status is 0 on success, 1 when a postcondition or input check fails and
2 for usage errors.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import ReferencePool, build_anchor_set, load_pool, manifest_text
from .attack import budget_levels, quantize_checked, run_attack, trace_csv
from .config import PRESETS, RunConfig, load_config_file, resolve
from .errors import ConfigError, SGHAError
from .evaluation import (
    alignment_score,
    named_defense,
    quality_csv,
    quality_report,
    run_transfer_eval,
    transfer_csv,
    transfer_summary_csv,
)
from .io import atomic_write_bytes, atomic_write_text, encode_ppm, quantize, read_ppm, write_ppm
from .numerics import gradient_check
from .objectives import evaluate, prepare_text_target
from .surrogate import init_model, load_weights, save_weights, tokenize
from .synthetic import synthetic_images

EFFECTIVE_CONFIG = "effective_config.txt"


class UsageError(Exception):
    pass


# --- shared helpers -------------------------------------------------------------


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _common(p: argparse.ArgumentParser, *, attack: bool = False) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", help=f"preset name ({', '.join(sorted(PRESETS))})")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--weights")
    p.add_argument("--output")
    if attack:
        p.add_argument("--pool")
        p.add_argument("--targets")
        p.add_argument("--clean")
        p.add_argument("--epsilon")
        p.add_argument("--alpha")
        p.add_argument("--steps")
        p.add_argument("--k")
        p.add_argument("--tau")
        p.add_argument("--layers")
        for name in ("anc", "feat", "cls", "spa", "mid"):
            p.add_argument(f"--lambda-{name}", dest=f"lambda_{name}")


def _run_config(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    flags = {"preset": args.preset, "seed": args.seed, "weights": args.weights, "output": args.output}
    for key in ("pool", "targets", "clean", "epsilon", "alpha", "steps", "k", "tau", "layers", "adv"):
        flags[key] = getattr(args, key, None)
    for name in ("anc", "feat", "cls", "spa", "mid"):
        flags[f"loss.lambda_{name}"] = getattr(args, f"lambda_{name}", None)
    if getattr(args, "no_trace", False):
        flags["record_trace"] = False
    if getattr(args, "eval_seeds", None) is not None:
        flags["eval.seeds"] = args.eval_seeds
    if getattr(args, "defenses", None) is not None:
        flags["eval.defenses"] = args.defenses
    try:
        return resolve(file_values, flags)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _require(cfg: RunConfig, *names) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join(missing)}")


def _check_paths(cfg: RunConfig, files=(), dirs=(), either=()) -> None:
    for n in files:
        if not Path(getattr(cfg, n)).is_file():
            raise ConfigError(f"{n} path {getattr(cfg, n)} is not a file")
    for n in dirs:
        if not Path(getattr(cfg, n)).is_dir():
            raise ConfigError(f"{n} path {getattr(cfg, n)} is not a directory")
    for n in either:
        if not Path(getattr(cfg, n)).exists():
            raise ConfigError(f"{n} path {getattr(cfg, n)} does not exist")


def read_targets(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ConfigError(f"target file {path} is empty")
    return lines


def read_clean(path, dims) -> list[tuple[str, np.ndarray]]:
    p = Path(path)
    files = [p] if p.is_file() else sorted(f for f in p.iterdir() if f.suffix.lower() == ".ppm")
    if not files:
        raise ConfigError(f"no .ppm images at {p}")
    out = []
    for f in files:
        img = read_ppm(f)
        if img.shape != tuple(dims):
            raise ConfigError(f"{f.name}: shape {img.shape} does not match model input {tuple(dims)}")
        out.append((f.stem, img))
    return out


def pair_targets(n_images: int, targets: list[str]) -> list[int]:
    if len(targets) == 1:
        return [0] * n_images
    if len(targets) != n_images:
        raise ConfigError(f"{len(targets)} targets for {n_images} images; give one target or one per image")
    return list(range(n_images))


def _load_model(cfg: RunConfig):
    if cfg.weights:
        return load_weights(cfg.weights)
    return init_model(PRESETS[cfg.preset]["surrogate"])


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --- subcommands -------------------------------------------------------------------


def cmd_init_weights(args) -> int:
    cfg = _run_config(args)
    _require(cfg, "output")
    sc = PRESETS[cfg.preset]["surrogate"]
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    model = init_model(sc)
    save_weights(model, cfg.output)
    print(f"preset = {cfg.preset}")
    for k, v in sc.__dict__.items():
        print(f"{k} = {v}")
    print(f"wrote {cfg.output}")
    return 0


def cmd_make_pool(args) -> int:
    if args.count is None or args.count < 1:
        raise UsageError("--count must be a positive integer")
    if args.preset is not None and args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}")
    if not args.output:
        raise UsageError("--output is required")
    size = PRESETS[args.preset or "vitb-paper"]["surrogate"].image_size
    images = synthetic_images(args.count, args.seed if args.seed is not None else 0, size)
    out = Path(args.output)
    width = max(3, len(str(args.count - 1)))
    for i, img in enumerate(images):
        write_ppm(out / f"{args.prefix}_{i:0{width}d}.ppm", img)
    print(f"wrote {len(images)} images to {out}")
    return 0


def _anchor_header(cfg: RunConfig, target: str) -> dict:
    return {"target": target, "K": cfg.k, "tau": cfg.tau, "layers": ",".join(map(str, cfg.layers)),
            "lambda_anc": cfg.loss.lambda_anc}


def cmd_select_anchors(args) -> int:
    cfg = _run_config(args)
    _require(cfg, "pool", "targets", "output")
    _check_paths(cfg, files=["targets"], dirs=["pool"])
    model = _load_model(cfg)
    cfg.attack_config().check_depth(model.config.depth_img)
    pool = load_pool(cfg.pool, model.config.image_shape)
    targets = read_targets(cfg.targets)
    out = Path(cfg.output)
    texts = []
    for t in targets:
        aset = build_anchor_set(pool, model, tokenize(t, model.config.max_text_len), cfg.k, cfg.tau, cfg.layers)
        texts.append(manifest_text(aset, _anchor_header(cfg, t)))
    for i, text in enumerate(texts):
        atomic_write_text(out / f"anchors_{i:03d}.txt", text)
    atomic_write_text(out / EFFECTIVE_CONFIG, cfg.echo())
    print(f"wrote {len(texts)} anchor manifest(s) to {out}")
    return 0


SUMMARY_HEADER = ("image_id,target_index,epsilon,budget,max_int_deviation,l_total_initial,l_total_final,"
                  "clean_alignment,adv_alignment,ssim,psnr,linf")


def cmd_attack(args) -> int:
    cfg = _run_config(args)
    _require(cfg, "pool", "targets", "clean", "output")
    _check_paths(cfg, files=["targets"], dirs=["pool"], either=["clean"])
    model = _load_model(cfg)
    acfg = cfg.attack_config()
    acfg.check_depth(model.config.depth_img)
    pool = load_pool(cfg.pool, model.config.image_shape)
    targets = read_targets(cfg.targets)
    cleans = read_clean(cfg.clean, model.config.image_shape)
    pairing = pair_targets(len(cleans), targets)
    tokens = [tokenize(t, model.config.max_text_len) for t in targets]

    t0 = time.perf_counter()
    used = sorted(set(pairing))
    phase1 = {t: (build_anchor_set(pool, model, tokens[t], acfg.k, acfg.tau, acfg.layers),
                  prepare_text_target(model, tokens[t], acfg.layers)) for t in used}

    def one(i):
        t = pairing[i]
        aset, text = phase1[t]
        return run_attack(model, cleans[i][1], tokens[t], None, acfg, anchor_set=aset, text=text)

    results = _map(one, range(len(cleans)), args.jobs)

    # verify every export before writing anything
    quantized = [quantize_checked(x, res.x_adv, acfg.epsilon) for (_, x), res in zip(cleans, results)]

    out = Path(cfg.output)
    rows = [SUMMARY_HEADER]
    for (iid, x), t, res, q_adv in zip(cleans, pairing, results, quantized):
        atomic_write_bytes(out / "adv" / f"{iid}.ppm", encode_ppm(q_adv))
        dev = int(np.abs(q_adv.astype(np.int32) - quantize(x).astype(np.int32)).max())
        if res.loss_trace is not None:
            atomic_write_text(out / "traces" / f"{iid}.csv", trace_csv(res))
        q = quality_report(x, res.x_adv)
        rows.append(",".join([
            iid, str(t), repr(acfg.epsilon), f"{budget_levels(acfg.epsilon)}/255", str(dev),
            repr(res.initial_breakdown.l_total), repr(res.final_breakdown.l_total),
            repr(alignment_score(model, x, tokens[t])), repr(alignment_score(model, res.x_adv, tokens[t])),
            repr(q.ssim), repr(q.psnr), repr(q.linf)]))
    for t in used:
        atomic_write_text(out / "anchors" / f"anchors_{t:03d}.txt",
                          manifest_text(phase1[t][0], _anchor_header(cfg, targets[t])))
    atomic_write_text(out / "summary.csv", "\n".join(rows) + "\n")
    atomic_write_text(out / EFFECTIVE_CONFIG, cfg.echo())
    print(f"attacked {len(cleans)} image(s) in {time.perf_counter() - t0:.2f}s; "
          f"budget {budget_levels(acfg.epsilon)}/255; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    _require(cfg, "clean", "adv", "targets", "output")
    _check_paths(cfg, files=["targets"], dirs=["adv"], either=["clean"])
    for d in cfg.defenses:
        named_defense(d)
    sc = PRESETS[cfg.preset]["surrogate"]
    surrogates = [load_weights(cfg.weights)] if cfg.weights else []
    surrogates += [init_model(replace(sc, seed=s)) for s in cfg.eval_seeds]
    if not surrogates:
        raise UsageError("no surrogate: give --weights and/or --eval-seeds")
    dims = surrogates[0].config.image_shape
    cleans = read_clean(cfg.clean, dims)
    advs = []
    for iid, _ in cleans:
        f = Path(cfg.adv) / f"{iid}.ppm"
        if not f.is_file():
            raise ConfigError(f"adversarial image {f} missing for clean image {iid}")
        advs.append(read_ppm(f))
    targets = read_targets(cfg.targets)
    pairing = pair_targets(len(cleans), targets)
    tokens = [tokenize(targets[t], surrogates[0].config.max_text_len) for t in pairing]
    ids = [iid for iid, _ in cleans]
    report = run_transfer_eval([x for _, x in cleans], advs, tokens, surrogates, cfg.defenses, ids=ids)
    quality = [quality_report(x, xa) for (_, x), xa in zip(cleans, advs)]
    out = Path(cfg.output)
    atomic_write_text(out / "transfer.csv", transfer_csv(report))
    atomic_write_text(out / "transfer_summary.csv", transfer_summary_csv(report))
    atomic_write_text(out / "quality.csv", quality_csv(ids, quality))
    atomic_write_text(out / EFFECTIVE_CONFIG, cfg.echo())
    for seed, defense, n, mc, ma, md in report.medians():
        print(f"surrogate {seed} defense {defense}: n={n} median clean {mc:.4f} adv {ma:.4f} delta {md:+.4f}")
    return 0


GRADCHECK_TEXT = "a photo of a dog playing in the snow"


def cmd_gradcheck(args) -> int:
    if not (0 < args.step <= 1e-2):
        raise UsageError(f"--step must lie in (0, 1e-2], got {args.step}")
    if args.coords < 1:
        raise UsageError("--coords must be positive")
    cfg = _run_config(args)
    model = _load_model(cfg)
    if args.seed is not None and not cfg.weights:
        model = init_model(replace(model.config, seed=args.seed))
    acfg = cfg.attack_config()
    acfg.check_depth(model.config.depth_img)
    seed = cfg.seed
    rng = np.random.default_rng(seed)
    size = model.config.image_size
    x = rng.uniform(0.05, 0.95, size=model.config.image_shape)
    pool = ReferencePool.from_images(synthetic_images(max(acfg.k, 4), seed + 1, size))
    tok = tokenize(GRADCHECK_TEXT, model.config.max_text_len)
    aset = build_anchor_set(pool, model, tok, min(acfg.k, len(pool)), acfg.tau, acfg.layers)
    text = prepare_text_target(model, tok, acfg.layers)

    def objective(z):
        bd, g = evaluate(model, z, text, aset, acfg.loss_weights)
        if args.corrupt_gradient:
            g = g * 1.5
        return bd.l_total, g

    def value(z):
        return evaluate(model, z, text, aset, acfg.loss_weights, want_grad=False)[0].l_total

    rep = gradient_check(objective, x, step=args.step, n_coords=args.coords, seed=seed, value_fn=value)
    ok = rep.max_relative_error < args.tolerance
    print(f"coordinates checked: {rep.coordinates_checked}")
    print(f"max relative error: {rep.max_relative_error:.3e} at coordinate {rep.worst_coordinate} "
          f"(analytic {rep.analytic_value:.6e}, numeric {rep.numeric_value:.6e})")
    print(f"tolerance {args.tolerance:.1e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgha", description="Targeted transfer attack on a miniature dual encoder.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="create a seeded surrogate weight file")
    _common(p)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("make-pool", help="write procedurally generated reference images")
    p.add_argument("--output", required=False)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset")
    p.add_argument("--prefix", default="ref")
    p.set_defaults(func=cmd_make_pool)

    p = sub.add_parser("select-anchors", help="write Top-K anchor manifests, one per target line")
    _common(p, attack=True)
    p.set_defaults(func=cmd_select_anchors)

    p = sub.add_parser("attack", help="craft adversarial images")
    _common(p, attack=True)
    p.add_argument("--no-trace", action="store_true", help="skip per-iteration trace CSVs")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="transfer and image-quality reports")
    _common(p, attack=True)
    p.add_argument("--adv", help="directory of adversarial .ppm files named like the clean ones")
    p.add_argument("--eval-seeds", help="comma-separated held-out surrogate seeds")
    p.add_argument("--defenses", help="comma-separated: none, bitN")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the total-loss gradient")
    _common(p, attack=True)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=64)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(str(exc), 2)
    except SGHAError as exc:
        return _fail(str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
