"""Command line interface: compress, decompress, inspect, bench."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, container
from .config import ModelConfig
from .errors import DszipError, UsageError
from .pipeline import clamp_workers

_DIM_FLAGS = ("ctx_len", "embed_dim", "cache_dim", "mix_dim", "expand_dim",
              "conv_kernel")


class _Parser(argparse.ArgumentParser):
    # argparse exits with its own code on bad flags; route through the
    # package's usage error instead so every failure maps to one exit table
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch", type=int, help="number of parallel streams")
    p.add_argument("--seed", type=int, help="model initialization seed")
    p.add_argument("--lr", type=float, help="learning rate")
    for name in _DIM_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), type=int)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dszip",
                description="learned streaming compressor; the model trains "
                            "itself on the data while coding it")
    p.add_argument("--version", action="version",
                   version=f"dszip {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("compress", help="compress FILE to a container")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--no-pipeline", action="store_true",
                   help="use the serial reference executor")
    c.add_argument("--workers", type=int,
                   help="worker hint recorded for decode-side defaults")
    c.add_argument("--metrics", metavar="PATH",
                   help="write per-step JSONL training metrics")
    _add_model_flags(c)

    d = sub.add_parser("decompress", help="restore a container to bytes")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--workers", type=int, default=1,
                   help="decode worker threads")

    i = sub.add_parser("inspect", help="print container header fields")
    i.add_argument("input")

    b = sub.add_parser("bench", help="sweep files, report ratio and speed")
    b.add_argument("corpus", nargs="+", help="files to benchmark")
    b.add_argument("--out", metavar="PATH", help="write a JSON report")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--no-pipeline", action="store_true")
    b.add_argument("--ablate", action="store_true",
                   help="additionally compare model variants on each file")
    _add_model_flags(b)
    return p


def _cfg_from_args(args) -> ModelConfig:
    kw = {}
    for name in _DIM_FLAGS + ("batch", "seed", "lr"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    if getattr(args, "workers", None) is not None:
        kw["workers"] = args.workers
    cfg = ModelConfig(**kw)
    if "workers" not in kw:
        # keep the workers-divide-batch invariant without making the user
        # compute a divisor
        cfg = replace(cfg, workers=clamp_workers(cfg.workers, cfg.batch))
    cfg.validate()
    return cfg


def _cmd_compress(args) -> int:
    cfg = _cfg_from_args(args)
    stats = container.compress_file(args.input, args.output, cfg,
                                    pipelined=not args.no_pipeline,
                                    metrics_path=args.metrics)
    print(f"{args.input}: {stats['original_bytes']} -> "
          f"{stats['compressed_bytes']} bytes "
          f"(ratio {stats['ratio']:.3f}, {stats['bits_per_byte']:.3f} "
          f"bits/byte, {stats['kb_per_min']:.0f} KB/min, "
          f"{'pipelined' if stats['pipelined'] else 'serial'})")
    return 0


def _cmd_decompress(args) -> int:
    stats = container.decompress_file(args.input, args.output,
                                      workers=args.workers)
    print(f"{args.input}: restored {stats['original_bytes']} bytes "
          f"({stats['kb_per_min']:.0f} KB/min, "
          f"{stats['workers']} workers)")
    return 0


def _cmd_inspect(args) -> int:
    info = container.inspect_file(args.input)
    width = max(len(k) for k in info)
    for key, val in info.items():
        print(f"{key:<{width}}  {val}")
    return 0


def _cmd_bench(args) -> int:
    from . import bench

    cfg = _cfg_from_args(args)
    report = bench.run_sweep(args.corpus, cfg,
                             pipelined=not args.no_pipeline,
                             workers=args.workers)
    for row in report["files"]:
        print(f"{row['file']}: ratio {row['ratio']:.3f}, "
              f"{row['bits_per_byte']:.3f} bits/byte, "
              f"total {row['total_kb_min']:.0f} KB/min, "
              f"score {row['score']:.3f}")
    if args.ablate:
        report["ablations"] = {}
        for path in args.corpus:
            data = Path(path).read_bytes()
            abl = bench.run_ablation(data, cfg)
            report["ablations"][path] = abl
            for variant, row in abl.items():
                print(f"{path} [{variant}]: ratio {row['ratio']:.3f}, "
                      f"final-quarter NLL {row['nll_final_quarter']:.4f} nats")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
        print(f"report written to {args.out}")
    return 0


_COMMANDS = {
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "inspect": _cmd_inspect,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"dszip: usage error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DszipError as exc:
        print(f"dszip: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dszip: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
