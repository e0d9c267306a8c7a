"""Command-line entry point: ``laae {train,compare,reconstruct,gradcheck}``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O or format error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .config import ExperimentConfig, parse_data_spec
from .data import DataFormatError, write_ppm
from .nn import ConfigError
from .train import compare, load_dataset, reconstruct, train

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--model", choices=["cae", "cvae", "vanilla"])
    p.add_argument("--optimizer", help="sgd | adam | lookahead(adam) | lookahead(sgd)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="synth:N[:seed] | cifar100:PATH[:N] | ppm:DIR[:N]")
    p.add_argument("--out", help="output directory")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, str] = {}
    for key in ("model", "optimizer", "epochs", "seed", "out", "batch_size", "eval_every"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if args.data:
        overrides.update(parse_data_spec(args.data))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    text = Path(args.config).read_text() if args.config else ""
    return ExperimentConfig.from_text(text, **overrides).validate()


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train(cfg, out_dir=cfg.out)
    print(f"wrote {cfg.out}/resolved.config, loss.csv, model.ckpt")
    return EXIT_OK


def cmd_compare(args) -> int:
    base = resolve_config(args)
    cfg_a = base.replace(optimizer=args.optimizer_a)
    cfg_b = base.replace(optimizer=args.optimizer_b)
    compare(cfg_a.validate(), cfg_b.validate(), out_dir=base.out)
    print(f"wrote {base.out}/compare.csv, compare.svg, verdict.txt")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args)
    ckpt_path = args.checkpoint or str(Path(cfg.out) / "model.ckpt")
    ckpt = load_checkpoint(ckpt_path, expect_kind=cfg.model)
    dataset = load_dataset(cfg)
    grid = reconstruct(ckpt, dataset, args.k)
    out = Path(args.output or Path(cfg.out) / "recon.ppm")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, grid)
    print(f"wrote {out} ({grid.shape[2]}x{grid.shape[1]})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run()
    for r in results:
        print(r.line())
    failed = [r.op for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="A/B two optimizers on identical runs")
    _add_common(p)
    p.add_argument("--optimizer-a", default="adam")
    p.add_argument("--optimizer-b", default="lookahead(adam)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reconstruct", help="write an actual/reconstructed PPM grid")
    _add_common(p)
    p.add_argument("--checkpoint", help="defaults to <out>/model.ckpt")
    p.add_argument("-k", type=int, default=5, help="number of images (default 5)")
    p.add_argument("--output", help="defaults to <out>/recon.ppm")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (DataFormatError, CheckpointError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
