"""Command-line entry point: ``klflow run <config> --out <dir>`` and ``klflow check [scope]``.

Set ``KLFLOW_NUM_THREADS`` to cap BLAS/OpenMP worker threads.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from klflow import _backend
from klflow.checks import SCOPES, run_checks
from klflow.config import parse_config
from klflow.discrepancy import write_metrics_csv
from klflow.errors import ConvergenceError, KLFlowError
from klflow.flow import simulate

THREADS_ENV = "KLFLOW_NUM_THREADS"


def _version():
    from klflow import __version__
    return __version__


def _atomic_write(path, text):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _ensemble_csv(e):
    header = ",".join([f"x_{i + 1}" for i in range(e.dim)] + ["weight"])
    rows = [",".join(repr(float(v)) for v in (*x, w)) for x, w in zip(e.positions, e.weights)]
    return "\n".join([header, *rows]) + "\n"


def _manifest(cfg, status, wall, **extra):
    return json.dumps({"status": status, "version": _version(), "backend": _backend.BACKEND,
                       "wall_time_seconds": wall, "config": cfg.to_dict(), **extra},
                      indent=2, sort_keys=False) + "\n"


def cmd_run(config_path, out_dir) -> int:
    """Run one configured flow and write metrics.csv, manifest.json and final_ensemble.csv."""
    try:
        cfg = parse_config(config_path)
    except (KLFlowError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        target = cfg.build_target()
        result = simulate(cfg.flow, cfg.build_init(target), target,
                          reference_size=cfg.target["reference_samples"],
                          record_every=cfg.output["record_every"])
    except ConvergenceError as err:
        wall = time.perf_counter() - t0
        _atomic_write(os.path.join(out_dir, "manifest.json"),
                      _manifest(cfg, "convergence_error", wall, error=str(err),
                                residual=err.residual, iterations=err.iterations,
                                step=getattr(err, "step", None)))
        print(f"error: {err}", file=sys.stderr)
        return 3
    except KLFlowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0

    buf = io.StringIO()
    write_metrics_csv(buf, result.records)
    _atomic_write(os.path.join(out_dir, "metrics.csv"), buf.getvalue())
    _atomic_write(os.path.join(out_dir, "final_ensemble.csv"), _ensemble_csv(result.ensemble))
    flags = {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
             for k, v in result.flags.items()}
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  _manifest(cfg, "ok", wall, final=result.records[-1].to_dict(), flags=flags))
    return 0


def cmd_check(scope="all", sigma=1.0, out=None) -> int:
    """Run the acceptance suite for ``scope``; 0 iff every criterion passes."""
    out = out or sys.stdout
    results = run_checks(scope, sigma=sigma, report=lambda line: print(line, file=out, flush=True))
    failed = [r.name for r in results if not r.ok]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} passed in {total:.1f}s", file=out)
    if failed:
        print("failed: " + ", ".join(failed), file=out)
        return 1
    return 0


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def build_parser():
    p = argparse.ArgumentParser(prog="klflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured flow")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory")
    c = sub.add_parser("check", help="run the acceptance suite")
    c.add_argument("scope", nargs="?", default="all", choices=SCOPES)
    c.add_argument("--sigma", type=float, default=1.0, help="Gaussian bandwidth used by the checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with _thread_limit():
        if args.command == "run":
            return cmd_run(args.config, args.out)
        return cmd_check(args.scope, sigma=args.sigma)


if __name__ == "__main__":
    sys.exit(main())
