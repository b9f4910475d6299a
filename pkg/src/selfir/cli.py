"""Command-line entry point: synth, train, eval, compare, mask-debug, ablate."""
import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigFileError, env_seed, load_config, merge, snapshot

log = logging.getLogger("selfir")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="selfir", description=__doc__)
    p.add_argument("--version", action="version", version=f"selfir {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="synthesize a blurry/noisy pair dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--scenes", type=int)
    s.add_argument("--noise", choices=("gaussian", "poisson", "sensor"))
    s.add_argument("--sigma-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="Gaussian std range in 8-bit levels (divided by 255)")
    s.add_argument("--lambda-range", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--literal-read-mean", action="store_true", default=None,
                   help="regress log read noise on lambda_shot instead of log(lambda_shot)")
    s.add_argument("--space", choices=("srgb", "linear"))
    s.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--frames", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=("png", "sirt"))
    s.add_argument("--clamp", action="store_true", default=None)
    s.add_argument("--bursts", help="directory of burst subdirectories (ordered sharp PNG frames)")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--mode")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--deterministic", action="store_true", default=None)
    t.add_argument("--toy", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--clip", action="store_true")
    e.add_argument("--run-id")

    c = sub.add_parser("compare", help="rank evaluation reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out", required=True, help="output prefix for .csv and .md")

    m = sub.add_parser("mask-debug", help="write a sharp-mask overlay for one pair")
    m.add_argument("--blurry", required=True)
    m.add_argument("--noisy", required=True)
    m.add_argument("--reference", help="denoised reference (default: 3x3 box filter of --noisy)")
    m.add_argument("--out", required=True)
    m.add_argument("--patch", type=int, default=16)
    m.add_argument("--eps-s", type=float, default=0.99)
    m.add_argument("--eps-v", type=float, default=1e-5)

    a = sub.add_parser("ablate", help="run a toy-scale ablation suite")
    a.add_argument("--suite", required=True,
                   choices=("table1", "table3", "table4", "reg_sweep", "aux_sweep"))
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, nargs="+", default=[0])
    a.add_argument("--steps", type=int)
    a.add_argument("--data", help="training manifest (default: bundled toy set)")
    a.add_argument("--test", help="test manifest (default: bundled toy set)")
    return p


# --------------------------------------------------------------------------
# subcommands


def _synth(args):
    from .data import SynthConfig, dataset_from_bursts, synth_dataset
    from .noise import NoiseConfig

    file_cfg = load_config(args.config) if args.config else {}
    noise_over = {
        "model": args.noise,
        "sigma_range": [v / 255.0 for v in args.sigma_range] if args.sigma_range else None,
        "lambda_range": args.lambda_range,
        "literal_read_mean": args.literal_read_mean,
    }
    over = {
        "n_scenes": args.scenes, "canvas": args.canvas, "n_frames": args.frames,
        "space": args.space, "seed": env_seed(args.seed) if args.seed is None else args.seed,
        "clamp": args.clamp, "noise": noise_over,
    }
    resolved = merge(file_cfg.get("synth", file_cfg), over)
    if resolved.get("noise", {}).get("model") == "sensor" and "space" not in resolved:
        resolved["space"] = "linear"
    out = Path(args.out)
    snapshot({"command": "synth", **resolved}, out / "config.json")
    try:
        noise = NoiseConfig(**resolved.pop("noise", {}))
        cfg = SynthConfig(noise=noise, **resolved)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from exc
    if args.bursts:
        try:
            path = dataset_from_bursts(out, args.bursts, cfg, args.format)
        except ValueError as exc:
            raise ConfigFileError(str(exc)) from exc
    else:
        path = synth_dataset(out, cfg, fmt=args.format)
    n = len(json.loads(path.read_text())["records"])
    print(f"wrote {n} pairs to {path}")
    return EXIT_OK


@contextlib.contextmanager
def _run_lock(out):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RuntimeError(f"run directory {out} is locked by another process ({lock})") from exc
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _train(args):
    from .data import PairDataset
    from .train import ConfigError, TrainConfig, train

    file_cfg = load_config(args.config) if args.config else {}
    file_cfg = file_cfg.get("train", file_cfg)
    seed = args.seed if args.seed is not None else env_seed(file_cfg.get("seed"))
    over = {"mode": args.mode, "seed": seed, "deterministic": args.deterministic,
            "max_steps": args.steps, "epochs": args.epochs}
    if args.toy:
        over["toy_profile"] = True
    resolved = merge(file_cfg, over)
    try:
        cfg = TrainConfig.from_dict(resolved)
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigFileError(str(exc)) from exc
    out = Path(args.out)
    snapshot(cfg.to_dict(), out / "config.json")
    dataset = PairDataset.from_manifest(args.data)
    with _run_lock(out):
        try:
            res = train(cfg, dataset, out_dir=out, resume=args.resume)
        except ConfigError as exc:
            raise ConfigFileError(str(exc)) from exc
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def _eval(args):
    from .data import PairDataset
    from .evalreport import evaluate, write_report

    out = Path(args.out)
    snapshot({"command": "eval", "ckpt": args.ckpt, "data": args.data, "clip": args.clip},
             out.with_suffix(".config.json"))
    dataset = PairDataset.from_manifest(args.data, require_clean=True)
    report = evaluate(args.ckpt, dataset, clip_output=args.clip, run_id=args.run_id)
    write_report(report, out)
    agg = report["aggregate"]
    print(f"PSNR {agg['psnr']:.3f} dB  SSIM {agg['ssim']:.4f}  over {agg['n']} images")
    return EXIT_OK


def _compare(args):
    from .evalreport import compare_runs, read_report, rows_to_csv, rows_to_markdown

    out = Path(args.out)
    snapshot({"command": "compare", "reports": args.reports}, Path(str(out) + ".config.json"))
    rows = compare_runs([read_report(p) for p in args.reports])
    cols = ["rank", "run_id", "mode", "psnr", "ssim", "n"]
    Path(str(out) + ".csv").write_text(rows_to_csv(rows, cols))
    md = rows_to_markdown(rows, cols)
    Path(str(out) + ".md").write_text(md)
    print(md, end="")
    return EXIT_OK


def _mask_debug(args):
    from .imaging import ColorSpace, load_image, save_image
    from .sharpmask import box_reference, overlay, sharp_mask

    out = Path(args.out)
    snapshot({"command": "mask-debug", **{k: v for k, v in vars(args).items() if k != "func"}},
             out.with_suffix(".config.json"))
    blurry = load_image(args.blurry, ColorSpace.SRGB)
    if args.reference:
        ref = load_image(args.reference, ColorSpace.SRGB)
    else:
        ref = box_reference(load_image(args.noisy, ColorSpace.SRGB))
    mask = sharp_mask(blurry, ref, args.patch, args.eps_s, args.eps_v)
    save_image(overlay(blurry, mask), out)
    print(f"{int(mask.values.sum())}/{mask.values.size} patches marked sharp -> {out}")
    return EXIT_OK


def _ablate(args):
    from .ablation import run_ablation, toy_datasets
    from .data import PairDataset

    out = Path(args.out)
    snapshot({"command": "ablate", "suite": args.suite, "seeds": args.seeds, "steps": args.steps,
              "data": args.data, "test": args.test}, out / "config.json")
    if bool(args.data) != bool(args.test):
        raise ConfigFileError("--data and --test must be given together")
    if args.data:
        train_set = PairDataset.from_manifest(args.data)
        test_set = PairDataset.from_manifest(args.test, require_clean=True)
    else:
        train_set, test_set = toy_datasets()
    rows = run_ablation(args.suite, train_set, test_set, seeds=args.seeds, steps=args.steps, out_dir=out)
    from .evalreport import rows_to_markdown
    print(rows_to_markdown(rows), end="")
    return EXIT_OK


COMMANDS = {
    "synth": _synth, "train": _train, "eval": _eval, "compare": _compare,
    "mask-debug": _mask_debug, "ablate": _ablate,
}


def main(argv=None):
    parser = _parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigFileError as exc:
        print(f"selfir: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to exit 1
        log.debug("failure", exc_info=True)
        print(f"selfir: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
