"""``coli`` command line: compress, decompress, eval, bench.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

from . import hypercodec, pipeline
from .errors import ColiError, NumericError
from .hypercodec import CodecConfig, worker_count
from .inr_net import make_config
from .pixel_io import load_image, save_image
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


@contextmanager
def stage(name: str):
    """Tag any error escaping the block with the pipeline stage it came from."""
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch", type=int, default=16, help="square patch side in pixels")
    p.add_argument("--arch", choices=("small", "medium"), default="small")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-patches", type=int, default=None)
    p.add_argument("--target-psnr", type=float, default=None, help="stop once the epoch PSNR reaches this")


def _add_codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--group-size", type=int, default=2)
    p.add_argument("--k-bits", type=int, choices=(8, 12, 16), default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coli", description="Large-image compression with implicit neural representations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="train on an image and write a .coli container")
    c.add_argument("image")
    c.add_argument("-o", "--out", required=True)
    _add_train_flags(c)
    c.add_argument("--hc", action=argparse.BooleanOptionalAction, default=True, help="hyper-compress the weights")
    _add_codec_flags(c)
    c.add_argument("--init", default=None, help="warm-start from this donor .coli")
    c.add_argument("--history", default=None, help="write per-epoch CSV history here")

    d = sub.add_parser("decompress", help="decode a .coli container to an image")
    d.add_argument("coli")
    d.add_argument("out_image", nargs="?")
    d.add_argument("-o", "--out", dest="out_flag", default=None)

    e = sub.add_parser("eval", help="score a .coli container against a reference image")
    e.add_argument("coli")
    e.add_argument("image")

    b = sub.add_parser("bench", help="compare post-training compressors on one trained model")
    b.add_argument("image")
    _add_train_flags(b)
    _add_codec_flags(b)
    b.add_argument("--prune-ratio", type=float, default=0.3)
    b.add_argument("--rank-frac", type=float, default=0.5)
    b.add_argument("--jobs", type=int, default=None, help="parallel variant workers (default: COLI_THREADS)")
    b.add_argument("--out", default=None, help="write PREFIX.csv and PREFIX.json")
    return parser


def _configs(args):
    try:
        t_cfg = TrainConfig(
            epochs=args.epochs, lr=args.lr, seed=args.seed,
            batch_patches=args.batch_patches, target_psnr=args.target_psnr,
        )
        codec = CodecConfig(group_size=args.group_size, k_bits=args.k_bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return t_cfg, codec


def _net_config(args, channels: int):
    try:
        return make_config(args.arch, args.patch, channels)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_compress(args) -> int:
    with stage("config"):
        t_cfg, codec = _configs(args)
    with stage("load"):
        img = load_image(args.image)
        cfg = _net_config(args, img.channels)
        init = pipeline.load_init(Path(args.init).read_bytes(), cfg) if args.init else None
    with stage("train"):
        grid = pipeline.grid_for(img, cfg)
        weights, history = train(grid, cfg, t_cfg, init=init)
    with stage("encode"):
        payload = hypercodec.compress(weights, codec) if args.hc else weights
        data, report = pipeline.package(img, cfg, payload)
    with stage("write"):
        Path(args.out).write_bytes(data)
        if args.history:
            Path(args.history).write_text(history.to_csv())
    out = report.to_dict()
    out.update(
        payload_kind="hyper" if args.hc else "raw_weights",
        epochs_run=len(history),
        train_psnr_db=history.final_psnr,
        params=weights.total_params,
    )
    print(json.dumps(out))
    return EXIT_OK


def cmd_decompress(args) -> int:
    out = args.out_flag or args.out_image
    if not out:
        raise UsageError("decompress needs an output image path")
    with stage("decode"):
        img = pipeline.decompress_bytes(Path(args.coli).read_bytes())
    with stage("write"):
        save_image(img, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    with stage("load"):
        data = Path(args.coli).read_bytes()
        ref = load_image(args.image)
    with stage("decode"):
        rep = pipeline.eval_bytes(data, ref)
    print(rep.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    with stage("config"):
        t_cfg, codec = _configs(args)
    with stage("load"):
        img = load_image(args.image)
        cfg = _net_config(args, img.channels)
    if not 0 <= args.prune_ratio < 1 or not 0 < args.rank_frac <= 1:
        raise UsageError("prune ratio must be in [0, 1) and rank fraction in (0, 1]")
    jobs = args.jobs or worker_count()
    with stage("bench"):
        rows = pipeline.run_bench(img, cfg, t_cfg, codec, args.prune_ratio, args.rank_frac, jobs=jobs)
    table = pipeline.bench_csv(rows)
    if args.out:
        Path(args.out + ".csv").write_text(table)
        Path(args.out + ".json").write_text(pipeline.bench_json(rows))
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {"compress": cmd_compress, "decompress": cmd_decompress, "eval": cmd_eval, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(args.command, exc, "usage error", EXIT_USAGE)
    except NumericError as exc:
        return _fail(args.command, exc, "numeric failure", EXIT_NUMERIC)
    except (ColiError, OSError) as exc:
        return _fail(args.command, exc, "data error", EXIT_DATA)


def _fail(command: str, exc: Exception, kind: str, code: int) -> int:
    where = getattr(exc, "stage", None)
    tag = f"coli {command} [{where}]" if where else f"coli {command}"
    print(f"{tag}: {kind}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
