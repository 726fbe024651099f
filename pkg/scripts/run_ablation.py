"""NIV ablation on one preset: full compensation against raw Doppler features.

The network is untrained, so both variants run with the same seeded
weights; the comparison shows how the invariant inputs move the estimate.
NAL only changes the training loss, so it is exercised by toy_train.py.

    python scripts/run_ablation.py --preset turn90 --frames 30
"""

import argparse
import dataclasses

from equiro.config import PipelineConfig, init_params
from equiro.evaluation import run_benchmark
from equiro.radar_cloud import Sequence
from equiro.synth import generate_sequence, get_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="turn90")
    ap.add_argument("--frames", type=int, default=30, help="leading frames to use")
    ap.add_argument("--segments", type=float, nargs="+", default=[5.0, 10.0])
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    seq, gt = generate_sequence(get_preset(args.preset))
    n = min(args.frames, len(seq))
    seq = Sequence(seq.frames[:n], labels=seq.labels[:n])
    traj = gt.trajectory()
    traj = type(traj)(traj.timestamps[:n], traj.poses[:n])

    for niv in (False, True):
        cfg = PipelineConfig(seed=args.seed, niv=niv)
        cfg.eval = dataclasses.replace(cfg.eval, segment_lengths=tuple(args.segments))
        res = run_benchmark(seq, "equi_ro", cfg, init_params(cfg), gt=traj, threads=args.threads)
        label = "NIV" if niv else "full"
        print(f"{label:<6} t_rel {res.metrics.t_rel:8.4f} %   r_rel {res.metrics.r_rel:.6f} deg/m   "
              f"failures {len(res.failures)}")


if __name__ == "__main__":
    main()
