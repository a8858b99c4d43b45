"""Per-interval turn-off detection table for one scenario.

    python3 scripts/interval_report.py --config configs/validation.yaml
"""
import argparse

import numpy as np

from ppdrive.config import load_config, parse_override
from ppdrive.harness import run_scenario, summary
from ppdrive.metrics import intervals


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    cfg = load_config(args.config, dict(parse_override(s) for s in args.set))
    trace, m = run_scenario(cfg)
    print(summary(m))
    det = np.flatnonzero(trace["detect_phase"] >= 0)
    slope_rows = np.flatnonzero(~np.isnan(trace["slope"]))
    print(f"{'phase':>5} {'start_deg':>10} {'detect_deg':>10} {'cycles':>6} {'err_deg':>8} {'bound_deg':>9}")
    errs = iter(zip(m.detection_angle_err, m.detection_tolerance))
    for a, b in intervals(trace):
        d = det[(det >= a) & (det < b)]
        n = np.count_nonzero((slope_rows >= a) & (slope_rows < b))
        ph = "ABC"[int(trace["active_phase"][a])]
        if len(d):
            err, tol = next(errs)
            print(f"{ph:>5} {trace['theta_deg'][a]:10.2f} {trace['theta_deg'][d[0]]:10.2f} {n:6d} {err:8.2f} {tol:9.2f}")
        else:
            print(f"{ph:>5} {trace['theta_deg'][a]:10.2f} {'-':>10} {n:6d} {'-':>8} {'-':>9}")


if __name__ == "__main__":
    main()
