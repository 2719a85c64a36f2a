"""Command line entry point: ``cusp-spectra run`` and ``cusp-spectra verify``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load
from .errors import CuspSpectraError

log = logging.getLogger("cusp_spectra")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cusp-spectra",
                                description="Spectral stability experiments on cusp domains.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config", help="path to the TOML config file")
    run.add_argument("--seed", type=_u64, help="override solver.seed")
    run.add_argument("--workers", type=_positive, help="override run.workers")
    run.add_argument("--out", help="override output.dir")
    ver = sub.add_parser("verify", help="run the acceptance checks")
    ver.add_argument("--quick", action="store_true",
                     help="skip the cusp sweep and use a coarser Lipschitz mesh")
    return p


def _run(args) -> int:
    from .experiments import run_experiment

    cfg = load(args.config).with_overrides(args.seed, args.workers, args.out)
    res = run_experiment(cfg)
    print(f"{res.name}: wrote {res.csv_path}, {res.svg_path}, {res.summary_path}")
    if res.cache_hits:
        print(f"cache hits: {res.cache_hits}")
    return 0


def _verify(args) -> int:
    from .verification import run_all

    results = run_all(quick=args.quick, report=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _run(args) if args.command == "run" else _verify(args)
    except CuspSpectraError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
