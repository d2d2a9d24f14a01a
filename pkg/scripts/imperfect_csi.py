"""Outage versus CSI reliability (correlation between estimate and channel).

    python3 scripts/imperfect_csi.py [--config configs/campaign.toml] [--reliability 1.0,0.99,0.95,0.9]
"""
import argparse
import csv
from pathlib import Path

from latwsr import runner
from latwsr.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default="configs/campaign.toml")
    ap.add_argument("--reliability", default="1.0,0.99,0.95,0.9")
    ap.add_argument("--seeds", type=int, help="use only the first N seeds of the config")
    ap.add_argument("--out", default="results/imperfect_csi.csv")
    args = ap.parse_args()
    base = load_config(args.config)
    if args.seeds:
        base = base.replace(seeds=base.seeds[: args.seeds])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["csi_reliability", "outage", "packets", "mean_sum_bits"])
        for r in (float(x) for x in args.reliability.split(",")):
            res = runner.run_campaign(base.replace(csi_reliability=r))
            w.writerow([r, repr(res.outage), len(res.latency_samples), repr(res.mean_sum_bits)])
            print(f"reliability={r:<5} outage={res.outage:.4f} packets={len(res.latency_samples)}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
