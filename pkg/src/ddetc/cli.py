"""Command-line entry point: ``ddetc <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible or a
failed certificate, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import PRESETS, load_config, load_preset, manifest
from .sdp import NoFeasibleBracket
from .synthesis import CodesignError
from .sysmodel import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3
REPRODUCIBLE = ("table1", "table2", "table3", "fig3", "fig4", "fig5")

log = logging.getLogger("ddetc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_seeds(text):
    """``"3"``, ``"0,2,5"`` or ``"0-4"``."""
    seeds = []
    try:
        for part in str(text).split(","):
            if "-" in part:
                a, b = part.split("-", 1)
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
    except ValueError as exc:
        raise UsageError(f"--seed: cannot parse {text!r}") from exc
    if not seeds or any(s < 0 for s in seeds):
        raise UsageError("--seed: need non-negative integers")
    return seeds


def _parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file or preset name")
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("--seed", help="seed, list 0,1,2 or range 0-4 (default: the config's seed)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for table cells")
    common.add_argument("--tol", type=float, help="bisection tolerance (overrides the config)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = _Parser(prog="ddetc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "simulate the closed loop for a given K and Omega"),
                       ("collect", "generate a noisy data set and check the data QMI"),
                       ("msi", "maximum sampling interval tables"),
                       ("codesign", "co-design K and Omega, then verify by simulation"),
                       ("oracle", "run the numerical identity oracles")):
        sub.add_parser(name, parents=[common], help=text)
    rp = sub.add_parser("reproduce", parents=[common], help="rerun a shipped experiment preset")
    rp.add_argument("target", choices=REPRODUCIBLE)
    return p


def _load(args, default=None):
    src = args.config or default
    if src is None:
        raise UsageError("--config is required")
    if src in PRESETS and not Path(src).exists():
        return load_preset(src)
    if not Path(src).exists():
        raise UsageError(f"--config: {src!r} is neither a file nor a preset ({', '.join(PRESETS)})")
    return load_config(src)


def _expect(cfg, kinds, command):
    if cfg["kind"] not in kinds:
        raise UsageError(f"{command}: config kind {cfg['kind']!r} is not one of {', '.join(kinds)}")


def _finish(out_dir, cfg, command, seeds, outputs, status, extra=None):
    m = manifest(cfg, command, seeds, cfg.get("backend", "auto"), outputs, dict(extra or {}, status=status))
    ex.write_json(Path(out_dir) / "manifest.json", m)


def cmd_simulate(args, cfg, out):
    _expect(cfg, ("simulate", "codesign"), "simulate")
    _, cert, files = ex.run_simulate(cfg, out)
    print(ex.dumps(cert))
    _finish(out, cfg, "simulate", [], files, "ok" if cert["passed"] else "certificate-failed")
    return EXIT_OK if cert["passed"] else EXIT_INFEASIBLE


def cmd_collect(args, cfg, out, seeds):
    _expect(cfg, ("collect", "codesign"), "collect")
    summary, files = ex.run_collect(cfg, out, seeds[0])
    print(ex.dumps(summary))
    _finish(out, cfg, "collect", seeds[:1], files, "ok", {"summary": summary})
    return EXIT_OK


def cmd_msi(args, cfg, out, seeds):
    kind = cfg["kind"]
    _expect(cfg, ("msi", "iterative", "convex-msi"), "msi")
    if kind == "msi":
        res = ex.run_msi_table(cfg, seeds, out, jobs=args.jobs, tol=args.tol)
        rows, files = res["median"], res["files"]
        bad = [c for c in res["cells"] if c["h_bar"] is not None and not (c["verified"] and
                                                                         (c["above_infeasible"] or c["capped"]))]
    elif kind == "iterative":
        rows = ex.run_iterative_table(cfg, seeds, out, tol=args.tol)
        files, bad = [Path(out) / "table.csv", Path(out) / "trace.csv"], []
    else:
        rows = ex.run_convex_table(cfg, seeds, out, tol=args.tol)
        files, bad = [Path(out) / "table.csv"], []
    for r in rows:
        print({k: v for k, v in r.items() if k != "trace"})
    _finish(out, cfg, "msi", seeds, files, "ok" if not bad else "certificate-failed")
    if bad:
        log.error("%d cells failed the re-verification", len(bad))
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_codesign(args, cfg, out, seeds):
    _expect(cfg, ("codesign",), "codesign")
    rep = ex.run_codesign(cfg, seeds[0], out)
    files = rep["files"] + [str(ex.write_gnuplot_stub(out, cfg.get("name", "codesign"), len(cfg["simulation"]["x0"])))]
    cert = rep["certificate"]
    print(ex.dumps({"K": rep["design"]["K"], "Omega": rep["design"]["Omega"], "margin": rep["design"]["margin"],
                    "valid": rep["design"]["valid"], "certificate": cert}))
    ok = cert["passed"] and rep["design"]["valid"] is not False
    _finish(out, cfg, "codesign", seeds[:1], files, "ok" if ok else "certificate-failed")
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_oracle(args, out, seeds):
    from .oracles import run_suite
    res = run_suite(seeds[0])
    ex.write_json(Path(out) / "oracles.json", res)
    for k, v in res["checks"].items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    _finish(out, {"kind": "oracle"}, "oracle", seeds[:1], [Path(out) / "oracles.json"],
            "ok" if res["passed"] else "failed")
    return EXIT_OK if res["passed"] else EXIT_INFEASIBLE


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.command == "oracle":
        return cmd_oracle(args, out, parse_seeds(args.seed or 0))
    cfg = _load(args, args.target if args.command == "reproduce" else None)
    seeds = parse_seeds(args.seed if args.seed is not None else cfg.get("seed", 0))
    command = args.command
    if command == "reproduce":
        command = {"table1": "msi", "table2": "msi", "table3": "msi"}.get(args.target, "codesign")
    handler = {"simulate": lambda: cmd_simulate(args, cfg, out), "collect": lambda: cmd_collect(args, cfg, out, seeds),
               "msi": lambda: cmd_msi(args, cfg, out, seeds), "codesign": lambda: cmd_codesign(args, cfg, out, seeds)}
    code = handler[command]()
    log.info("%s finished in %.1fs with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


def main(argv=None):
    try:
        code = run(argv)
    except (ConfigError, UsageError) as exc:
        problems = getattr(exc, "problems", [str(exc)])
        for pr in problems:
            print(f"error: {pr}", file=sys.stderr)
        code = EXIT_USAGE
    except (NoFeasibleBracket, CodesignError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    sys.exit(code)


if __name__ == "__main__":
    main()
