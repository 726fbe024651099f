"""Run every registration method on every preset and print a metrics table.

    python scripts/run_benchmark_presets.py --out results/bench.json
    python scripts/run_benchmark_presets.py --presets turn90 --methods icp equi_ro_oracle
"""

import argparse
import json
import time

from equiro.cli import dump_json
from equiro.config import PipelineConfig, init_params
from equiro.evaluation import METHODS, run_benchmark
from equiro.synth import PRESETS, generate_sequence, get_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=sorted(PRESETS))
    ap.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    ap.add_argument("--noiseless", action="store_true")
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="write all records as one JSON file")
    args = ap.parse_args()

    cfg = PipelineConfig(seed=args.seed)
    params = init_params(cfg)
    records = []
    print(f"{'preset':<14}{'method':<16}{'t_rel %':>10}{'r_rel deg/m':>14}{'fail':>6}{'sec':>8}")
    for name in args.presets:
        seq, gt = generate_sequence(get_preset(name, noiseless=args.noiseless))
        for method in args.methods:
            t0 = time.perf_counter()
            res = run_benchmark(seq, method, cfg, params, gt=gt.trajectory(), threads=args.threads)
            dt = time.perf_counter() - t0
            m = res.metrics
            print(f"{name:<14}{method:<16}{m.t_rel:>10.4f}{m.r_rel:>14.6f}"
                  f"{len(res.failures):>6}{dt:>8.1f}")
            records.append({"preset": name, "noiseless": args.noiseless, **res.record()})
    if args.out:
        dump_json(records, args.out)


if __name__ == "__main__":
    main()
