"""Latency outage versus arrival rate, proposed engine against weighted WMMSE.

    python3 scripts/outage_vs_lambda.py [--config configs/campaign.toml] [--lams 0.05,0.07,0.09]
        [--weights 1,0.1,0.01,0.001] [--out results/outage_vs_lambda.csv]

With ``--weights`` each cell's users get those priorities instead of equal ones.
"""
import argparse
import csv
import time
from pathlib import Path

from latwsr import runner
from latwsr.config import PoissonTrafficParams, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default="configs/campaign.toml")
    ap.add_argument("--lams", default="0.05,0.07,0.09")
    ap.add_argument("--algorithms", default="centralized,wmmse_baseline")
    ap.add_argument("--weights", help="comma separated per-slot user weights")
    ap.add_argument("--out", default="results/outage_vs_lambda.csv")
    args = ap.parse_args()
    base = load_config(args.config)
    beta = [float(x) for x in args.weights.split(",")] if args.weights else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "lam", "outage", "packets", "mean_sum_bits"])
        for alg in args.algorithms.split(","):
            for lam in (float(x) for x in args.lams.split(",")):
                cfg = base.replace(algorithm=alg, beta=beta, traffic=PoissonTrafficParams(lam=lam))
                start = time.perf_counter()
                res = runner.run_campaign(cfg)
                w.writerow([alg, lam, repr(res.outage), len(res.latency_samples), repr(res.mean_sum_bits)])
                fh.flush()
                print(f"{alg:15s} lam={lam:<5} outage={res.outage:.4f} packets={len(res.latency_samples)} "
                      f"({time.perf_counter() - start:.0f} s)")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
