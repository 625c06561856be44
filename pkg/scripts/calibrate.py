"""Calibrate the structural constants for a scenario and print a constants block.

    python3 scripts/calibrate.py --config scripts/scenario_forced.json > constants.json
"""
import argparse
import json
import time

from bbm_memory.config import ScenarioConfig, load_config
from bbm_memory.functionals import calibrate_constants


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--samples", type=int, default=3000)
    ap.add_argument("--F-max", type=float, default=30.0)
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    t0 = time.perf_counter()
    res = calibrate_constants(cfg.domain, cfg.kernel, n_random=args.samples, F_max=args.F_max, seed=cfg.seed)
    out = res.to_dict()
    out["seconds"] = round(time.perf_counter() - t0, 1)
    out["frak_c"] = res.constants.frak_c
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
