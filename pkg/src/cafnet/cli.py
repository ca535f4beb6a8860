"""
Command-line entry point::

    cafnet train    --data DIR --out CKPT [--variant ...] [--fixed-layers on|off] ...
    cafnet enhance  --ckpt CKPT --in IMG --out IMG
    cafnet probe    (--ckpt CKPT | --random-init VARIANT[:on|off] --seed S) --size N --out-prefix P
    cafnet metrics  --ref DIR --test DIR --out CSV
    cafnet kernel   --rate R --order D [--normalize none|unit|mean]
    cafnet replay   MANIFEST

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
Every command that writes files also writes a ``<output>.manifest``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (amplitude_spectrum, analyze, artifact_peak_ratio, gray_probe, psnr, ssim)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_dataset, load_image, read_png, save_image, write_png
from .errors import CafnetError, CheckpointError, ConfigurationError, InvalidInputError, NumericError
from .fixed import NORMALIZATIONS, build_fixed_kernel
from .network import Network, NetworkConfig, build_network
from .optim import AdamState
from .tensor import Tensor, no_grad
from .train import TrainConfig, global_input, train

log = logging.getLogger("cafnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class CommandFailed(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# -- manifest -----------------------------------------------------------------------
def write_manifest(path: Path, command: str, argv: Sequence[str], settings: dict,
                   inputs: Sequence[str], outputs: Sequence[str]) -> None:
    entries = {
        "argv": json.dumps(list(argv)),
        "command": command,
        "inputs": json.dumps(list(inputs)),
        "outputs": json.dumps(list(outputs)),
        "tool_version": __version__,
    }
    for key, value in settings.items():
        entries[f"config.{key}"] = value if isinstance(value, str) else json.dumps(value)
    text = "".join(f"{k}={entries[k]}\n" for k in sorted(entries))
    path.write_text(text, encoding="utf-8")


def read_manifest(path: Path) -> dict[str, str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return dict(line.split("=", 1) for line in lines if line)


def _manifest_path(args, primary: Optional[str]) -> Optional[Path]:
    if args.manifest:
        return Path(args.manifest)
    return Path(f"{primary}.manifest") if primary else None


# -- helpers ------------------------------------------------------------------------
def _variant(text: str) -> str:
    v = text.replace("-", "_")
    if v not in ("unet", "local_global"):
        raise argparse.ArgumentTypeError(f"unknown variant {text!r} (unet or local-global)")
    return v


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _random_init(text: str) -> NetworkConfig:
    variant, _, fixed = text.partition(":")
    try:
        return NetworkConfig(variant=_variant(variant), fixed_layers=_on_off(fixed or "on"))
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"--random-init {text!r}: {exc}") from None


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _load_net(path: str) -> tuple[Network, Optional[AdamState]]:
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError, ConfigurationError) as exc:
        raise CommandFailed(f"cannot load checkpoint {path}: {exc}") from exc


def enhance_image(net: Network, image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Eval-mode forward of a ``(3, h, w)`` image; pads to a multiple of ``2**depth``."""
    factor = 2 ** net.config.depth
    _, h, w = image.shape
    ph, pw = -h % factor, -w % factor
    padded = image
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "symmetric"
        padded = np.pad(image, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), mode=mode)
    x = Tensor(padded[None], dtype=net.dtype)
    g = None
    if net.config.variant == "local_global":
        g = Tensor(global_input(image[None], net.config.global_input_size), dtype=net.dtype)
    with no_grad():
        out = net.forward(x, g, train=False).data[0]
    return out[:, ph // 2:ph // 2 + h, pw // 2:pw // 2 + w], (ph, pw)


# -- commands -------------------------------------------------------------------------
def cmd_train(args, argv) -> None:
    out = Path(args.out)
    loss_csv = Path(f"{out}.loss.csv")
    try:
        pairs, rejected = load_dataset(args.data)
    except InvalidInputError as exc:
        raise CommandFailed(str(exc)) from exc
    if not pairs:
        raise CommandFailed(f"no usable image pairs in {args.data}")
    net_cfg = NetworkConfig(variant=args.variant, fixed_layers=args.fixed_layers)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, crop=args.crop, batch_size=args.batch,
                      seed=args.seed)
    try:
        cfg.validate(net_cfg.depth)
    except ConfigurationError as exc:
        raise CommandFailed(str(exc)) from exc
    net = build_network(net_cfg, seed=args.seed)
    save_checkpoint(out, net, AdamState())

    with open(loss_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_l1"])

        def on_epoch(epoch, mean, net, state):
            writer.writerow([epoch, _fmt(mean)])
            fh.flush()
            save_checkpoint(out, net, state)

        try:
            # divergence is detected and reported explicitly below
            with np.errstate(over="ignore", invalid="ignore"):
                train(net, pairs, cfg, callbacks=[on_epoch])
        except NumericError as exc:
            raise CommandFailed(f"training diverged: {exc}; last good checkpoint kept at {out}",
                                EXIT_NUMERIC) from exc
        except InvalidInputError as exc:
            raise CommandFailed(str(exc)) from exc

    settings = {**net_cfg.to_dict(), "epochs": cfg.epochs, "lr": cfg.lr, "crop": cfg.crop,
                "batch_size": cfg.batch_size, "beta1": cfg.beta1, "beta2": cfg.beta2,
                "adam_epsilon": cfg.adam_epsilon, "scale_range": list(cfg.scale_range),
                "flip_prob": cfg.flip_prob, "seed": cfg.seed,
                "rejected": [r.identifier for r in rejected]}
    write_manifest(_manifest_path(args, str(out)), "train", argv, settings,
                   [args.data], [str(out), str(loss_csv)])


def cmd_enhance(args, argv) -> None:
    net, _ = _load_net(args.ckpt)
    try:
        image = load_image(args.input)
    except OSError as exc:
        raise CommandFailed(f"cannot read {args.input}: {exc}") from exc
    out, (ph, pw) = enhance_image(net, image)
    save_image(args.out, out)
    write_manifest(_manifest_path(args, args.out), "enhance", argv,
                   {"pad_height": ph, "pad_width": pw, **net.config.to_dict()},
                   [args.ckpt, args.input], [args.out])


def cmd_probe(args, argv) -> None:
    if args.ckpt:
        net, _ = _load_net(args.ckpt)
    else:
        net = build_network(args.random_init, seed=args.seed)
    factor = 2 ** net.config.depth
    if args.size % factor:
        raise CommandFailed(f"--size must be a multiple of {factor}")
    out = gray_probe(net, args.size, args.size, level=args.level)
    report = analyze(out)
    ratio = artifact_peak_ratio(amplitude_spectrum(out))
    prefix = args.out_prefix
    paths = [f"{prefix}_probe.png", f"{prefix}_spectrum.png", f"{prefix}_score.csv",
             f"{prefix}_peaks.csv"]
    save_image(paths[0], out)
    write_png(paths[1], np.rint(report.spectrum * 255.0).astype(np.uint8))
    with open(paths[2], "w", newline="") as fh:
        csv.writer(fh).writerows([["checkerboard_score", "artifact_peak_ratio"],
                                  [_fmt(report.checkerboard_score), _fmt(ratio)]])
    with open(paths[3], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "value"])
        writer.writerows([[u, v, _fmt(val)] for u, v, val in report.peaks])
    print(f"checkerboard_score={report.checkerboard_score:.6f}")
    settings = {"size": args.size, "level": args.level, "seed": args.seed, **net.config.to_dict()}
    write_manifest(_manifest_path(args, prefix), "probe", argv, settings,
                   [args.ckpt] if args.ckpt else [], paths)


def cmd_metrics(args, argv) -> None:
    ref_dir, test_dir = Path(args.ref), Path(args.test)
    refs = {p.name for p in ref_dir.glob("*.png")}
    tests = {p.name for p in test_dir.glob("*.png")}
    for name in sorted(refs ^ tests):
        log.warning("unmatched file skipped: %s", name)
    names = sorted(refs & tests)
    if not names:
        raise CommandFailed("no matching image pairs")
    rows = []
    for name in names:
        a = read_png(ref_dir / name).astype(np.float64) / 255.0
        b = read_png(test_dir / name).astype(np.float64) / 255.0
        if a.shape != b.shape:
            log.warning("size mismatch skipped: %s", name)
            continue
        a, b = a.transpose(2, 0, 1), b.transpose(2, 0, 1)
        rows.append((name, psnr(b, a), ssim(b, a)))
    if not rows:
        raise CommandFailed("no comparable image pairs")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "psnr_db", "ssim"])
        for name, p, s in rows:
            writer.writerow([name, _fmt(p), _fmt(s)])
        writer.writerow(["mean", _fmt(np.mean([r[1] for r in rows])), _fmt(np.mean([r[2] for r in rows]))])
    write_manifest(_manifest_path(args, args.out), "metrics", argv, {"pairs": len(rows)},
                   [str(ref_dir), str(test_dir)], [args.out])


def format_kernel(kernel: np.ndarray) -> str:
    return "\n".join(" ".join(format(float(v), ".9g") for v in row) for row in kernel)


def cmd_kernel(args, argv) -> None:
    try:
        fk = build_fixed_kernel(args.rate, args.order, args.normalize)
    except ConfigurationError as exc:
        raise CommandFailed(str(exc)) from exc
    text = format_kernel(fk.kernel)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    path = _manifest_path(args, args.out)
    if path is not None:
        write_manifest(path, "kernel", argv,
                       {"rate": args.rate, "order": args.order, "normalize": args.normalize},
                       [], [args.out] if args.out else [])


def cmd_replay(args, argv) -> None:
    entries = read_manifest(Path(args.manifest_file))
    if "argv" not in entries:
        raise CommandFailed(f"{args.manifest_file} has no argv entry")
    code = main(json.loads(entries["argv"]))
    if code:
        raise CommandFailed("replayed command failed", code)


# -- parser ----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cafnet", allow_abbrev=False,
                                     description="Checkerboard-artifact-free enhancement network tools.")
    parser.add_argument("--version", action="version", version=f"cafnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, allow_abbrev=False)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train a network on a paired dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", type=_variant, default="local_global")
    p.add_argument("--fixed-layers", type=_on_off, default=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--crop", type=int, default=256)
    p.add_argument("--manifest")

    p = add("enhance", cmd_enhance, "enhance one PNG image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")

    p = add("probe", cmd_probe, "gray-image checkerboard probe")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt")
    src.add_argument("--random-init", type=_random_init, metavar="VARIANT[:on|off]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--level", type=float, default=0.5)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest")

    p = add("metrics", cmd_metrics, "PSNR/SSIM between two directories of PNGs")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")

    p = add("kernel", cmd_kernel, "print a fixed smoothing kernel")
    p.add_argument("--rate", type=int, required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--normalize", choices=NORMALIZATIONS, default="none")
    p.add_argument("--out")
    p.add_argument("--manifest")

    p = add("replay", cmd_replay, "re-run the command recorded in a manifest")
    p.add_argument("manifest_file")
    p.set_defaults(manifest=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except CommandFailed as exc:
        print(f"cafnet {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        print(f"cafnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CafnetError as exc:
        print(f"cafnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
