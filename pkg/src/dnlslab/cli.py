"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnlslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("forward", "forward scattering extraction"),
                       ("inverse", "backward construction of initial data from a datum"),
                       ("verify", "exact-algebra and oracle checks"),
                       ("soliton-demo", "soliton evolution against its closed form")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="TOML config; defaults apply when omitted")
        s.add_argument("--out", help="output directory (overrides [outputs] dir)")
        s.add_argument("--threads", type=int, default=1, help="worker processes")
        s.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if not 0 <= args.seed < 2 ** 64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    # one evolution is sequential; keep BLAS/FFT pools from oversubscribing workers
    os.environ.setdefault("OMP_NUM_THREADS", "1")

    from .config import ConfigError, default_config, load_config
    from . import experiments as ex
    from .solver import NumericalFailure

    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.out:
            cfg = cfg.with_output_dir(args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "forward":
            b = ex.run_forward_scatter(cfg, seed=args.seed)
        elif args.command == "inverse":
            b = ex.run_inverse_construct(cfg, seed=args.seed, threads=args.threads)
            b.summary.pop("_solutions", None)
        elif args.command == "verify":
            b = ex.run_verify_lemmas(cfg, seed=args.seed)
        else:
            b = ex.run_soliton_demo(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc} (last good t = {exc.last_good_time})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "verify":
        failed = [c["name"] for c in b.summary["checks"] if not c["passed"]]
        for c in b.summary["checks"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']:.3e} (tol {c['tolerance']:.1e})")
        if failed:
            print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
            return EXIT_VERIFY
        return EXIT_OK
    print(json.dumps({"out_dir": str(b.out_dir), "files": b.files}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
