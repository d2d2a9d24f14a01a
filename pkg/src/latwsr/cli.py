"""Command line front end.

    latwsr run   --config cfg.toml [--seed 3] [--algorithm centralized] --out res --format csv
    latwsr check [--config cfg.toml]
    latwsr sweep --config cfg.toml --param traffic.lam --values 0.03,0.05,0.07 --out sweep/

Exit codes: 0 success, 2 infeasible QoS target, 1 anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import checks, runner
from .config import ALGORITHMS, ConfigError, ScenarioConfig, load_config
from .qos import InfeasibleQosError

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "algorithm", None):
        changes["algorithm"] = args.algorithm
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "continue_on_infeasible", False):
        changes["continue_on_infeasible"] = True
    return cfg.replace(**changes) if changes else cfg


def set_param(cfg: ScenarioConfig, dotted: str, value):
    """Return ``cfg`` with ``section.field`` (or a top-level field) replaced."""
    parts = dotted.split(".")
    if len(parts) == 1:
        return cfg.replace(**{parts[0]: _coerce(getattr(cfg, parts[0]), value)})
    if len(parts) == 2 and parts[0] in ("traffic", "solver"):
        sub = getattr(cfg, parts[0])
        new = dataclasses.replace(sub, **{parts[1]: _coerce(getattr(sub, parts[1]), value)})
        return cfg.replace(**{parts[0]: new})
    raise ConfigError(f"cannot sweep over {dotted!r}")


def _coerce(current, value):
    if isinstance(current, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None:
        return float(value)
    return value


def _run(cfg, args, out):
    try:
        result = runner.run_campaign(cfg)
    except InfeasibleQosError:
        if not cfg.continue_on_infeasible:
            raise
        logging.warning("infeasible QoS target, skipping %s", out)
        return None
    runner.emit_results(result, args.format, out)
    print(f"outage={result.outage!r} packets={len(result.latency_samples)} "
          f"mean_sum_bits={result.mean_sum_bits!r} -> {out}")
    return result


def cmd_run(args) -> int:
    cfg = _load(args)
    _run(cfg, args, Path(args.out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in args.values.split(","):
        point = set_param(cfg, args.param, v.strip())
        name = f"{args.param}={v.strip()}"
        target = out / (name + (".json" if args.format == "json" else ""))
        res = _run(point, args, target)
        if res is not None:
            rows.append((v.strip(), res.outage, res.mean_sum_bits, len(res.latency_samples)))
    with open(out / "sweep.csv", "w") as fh:
        fh.write(f"{args.param},outage,mean_sum_bits,packets\n")
        for r in rows:
            fh.write(",".join(str(x) if isinstance(x, str) else repr(x) for x in r) + "\n")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _load(args) if args.config else None
    results = checks.run_all(cfg, seed=args.seed or 0)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latwsr", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML scenario file")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the config's list")

    r = sub.add_parser("run", help="run a campaign")
    common(r)
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--workers", type=int)
    r.add_argument("--continue-on-infeasible", action="store_true")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run a campaign per value of one parameter")
    common(s)
    s.add_argument("--algorithm", choices=ALGORITHMS)
    s.add_argument("--param", required=True, help="e.g. traffic.lam, csi_reliability, solver.max_inner")
    s.add_argument("--values", required=True, help="comma separated")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--workers", type=int)
    s.add_argument("--continue-on-infeasible", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("check", help="run the invariant checks on small random instances")
    common(c)
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.fn(args)
    except InfeasibleQosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
