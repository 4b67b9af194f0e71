"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical or invariant
failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .config import load_config
from .errors import ConfigurationError, NumericalError, TraceIOError
from .pipeline import STAGES, Pipeline, ingest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
LOCK_NAME = ".squeezelab.lock"


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML config (default: packaged default)")
    p.add_argument("--seed", type=int, help="override noise.seed")
    p.add_argument("--out", type=Path, help="output directory (default: output.directory)")
    p.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. analysis.gain=0 or pump.waist_um=60; repeatable",
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="squeezelab", description="Multimode squeezed-light simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the pipeline (all stages unless --stage is given)")
    _common(run)
    run.add_argument("--stage", choices=STAGES, action="append", help="run only this stage; repeatable")
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage on cached artifacts"))
    ing = sub.add_parser("ingest", help="analyze external traces listed in a manifest")
    _common(ing)
    ing.add_argument("--traces", type=Path, required=True, help="directory holding the trace CSVs")
    ing.add_argument("--manifest", type=Path, help="manifest JSON (default: <traces>/manifest.json)")
    return parser


def _execute(args) -> None:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"noise.seed={args.seed}")
    config = load_config(args.config, overrides)
    out = args.out if args.out is not None else Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / LOCK_NAME))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise TraceIOError(f"output directory {out} is locked by another run") from None
    try:
        if args.command == "ingest":
            manifest = args.manifest if args.manifest is not None else args.traces / "manifest.json"
            bundle = ingest(config, args.traces, manifest, out)
        else:
            stages = args.stage if args.command == "run" and args.stage else STAGES
            if args.command != "run":
                stages = (args.command,)
            bundle = Pipeline(config, out).run(stages)
    finally:
        lock.release()
    for name, v in bundle.verdicts.items():
        print(f"{name}: {v.label} (X: {v.count_x}, P: {v.count_p} non-vacuum eigenvalues)")
    if bundle.gain is not None:
        print(f"gain g = {bundle.gain:.6g}")
    print(f"results in {out}")


def _provenance(exc: BaseException) -> str:
    """Package module in which the error was raised."""
    where = "squeezelab"
    tb = exc.__traceback__
    pkg = Path(__file__).parent
    while tb is not None:
        path = Path(tb.tb_frame.f_code.co_filename)
        if path.parent == pkg:
            where = path.stem
        tb = tb.tb_next
    return where


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _execute(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error in {_provenance(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TraceIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
