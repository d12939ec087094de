"""``mcst2ct`` command-line entry point.

Usage: ``mcst2ct <verb> [--config FILE] [--seed N] [--out DIR] [--threads N]``
with verbs train, simulate, reconstruct, evaluate, report. On failure a single
JSON line ``{"error": <kind>, "message": <text>}`` goes to stderr and the exit
code is nonzero (2 for configuration errors, 1 otherwise).
"""

import argparse
import json
import os
import sys

VERBS = ("train", "simulate", "reconstruct", "evaluate", "report")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser():
    ap = argparse.ArgumentParser(prog="mcst2ct", description=__doc__.splitlines()[0])
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", help="TOML experiment configuration")
    ap.add_argument("--seed", type=int, help="override train.seed and simulate.seed")
    ap.add_argument("--out", help="override output_dir")
    ap.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    return ap


def _fail(kind, message, code):
    line = json.dumps({"error": kind, "message": " ".join(str(message).split())}, sort_keys=True)
    print(line, file=sys.stderr)
    return code


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            raise
        return _fail("usage", "invalid command line; see mcst2ct --help", 2)
    if args.threads is not None:
        if args.threads < 1:
            return _fail("usage", "--threads must be >= 1", 2)
        # only effective before numpy is first imported in this process
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .commands import COMMANDS
    from .config import ConfigError, load_config, with_overrides

    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, out=args.out)
        written = COMMANDS[args.verb](cfg)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except FileNotFoundError as exc:
        return _fail("missing-input", exc, 1)
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
