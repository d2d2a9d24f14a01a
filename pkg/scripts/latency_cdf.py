"""Empirical latency CDF (in ms) of one campaign per algorithm.

    python3 scripts/latency_cdf.py [--config configs/campaign.toml] [--out results/latency_cdf.csv]
"""
import argparse
import csv
from pathlib import Path

from latwsr import runner
from latwsr.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default="configs/campaign.toml")
    ap.add_argument("--algorithms", default="centralized,wmmse_baseline")
    ap.add_argument("--seeds", type=int, help="use only the first N seeds of the config")
    ap.add_argument("--out", default="results/latency_cdf.csv")
    args = ap.parse_args()
    base = load_config(args.config)
    if args.seeds:
        base = base.replace(seeds=base.seeds[: args.seeds])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "latency_ms", "cumulative_fraction"])
        for alg in args.algorithms.split(","):
            res = runner.run_campaign(base.replace(algorithm=alg))
            for ttis, frac in runner.latency_cdf(res.latency_samples):
                w.writerow([alg, repr(ttis * res.tti_ms), repr(frac)])
            print(f"{alg:15s} outage={res.outage:.4f} packets={len(res.latency_samples)}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
