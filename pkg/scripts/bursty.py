"""Outage under ON-OFF traffic as the mean OFF period varies.

    python3 scripts/bursty.py [--config configs/bursty.toml] [--off-rates 0.02,0.01,0.005]
"""
import argparse
import csv
import dataclasses
from pathlib import Path

from latwsr import runner
from latwsr.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default="configs/bursty.toml")
    ap.add_argument("--off-rates", default="0.02,0.01,0.005")
    ap.add_argument("--algorithms", default="centralized,wmmse_baseline")
    ap.add_argument("--out", default="results/bursty.csv")
    args = ap.parse_args()
    base = load_config(args.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "off_rate", "outage", "packets", "mean_sum_bits"])
        for alg in args.algorithms.split(","):
            for rate in (float(x) for x in args.off_rates.split(",")):
                cfg = base.replace(algorithm=alg, traffic=dataclasses.replace(base.traffic, off_rate=rate))
                res = runner.run_campaign(cfg)
                w.writerow([alg, rate, repr(res.outage), len(res.latency_samples), repr(res.mean_sum_bits)])
                print(f"{alg:15s} off_rate={rate:<6} outage={res.outage:.4f} packets={len(res.latency_samples)}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
