"""Fit a few scalar parameters on synthetic pairs and write the loss trace.

    python scripts/toy_train.py --trainable alpha beta --steps 50 --trace trace.csv
    python scripts/toy_train.py --trainable beta --nal
"""

import argparse

from equiro import se3
from equiro.config import PipelineConfig, init_params
from equiro.loss import TrainConfig, toy_train
from equiro.synth import generate_sequence, get_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="turn90")
    ap.add_argument("--pairs", type=int, nargs="+", default=[35],
                    help="index of the first frame of each training pair")
    ap.add_argument("--trainable", nargs="+", default=["alpha", "beta"])
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--nal", action="store_true", help="fixed loss weights, no pitch/yaw terms")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trace", default=None, help="CSV path for the loss trace")
    args = ap.parse_args()

    seq, gt = generate_sequence(get_preset(args.preset))
    pairs = []
    for k in args.pairs:
        truth = se3.inverse(se3.compose(se3.inverse(gt.poses[k]), gt.poses[k + 1]))
        pairs.append((seq.frames[k], seq.frames[k + 1], truth))

    cfg = PipelineConfig(seed=args.seed, nal=args.nal)
    tc = TrainConfig(trainable=tuple(args.trainable), steps=args.steps, learning_rate=args.lr)
    res = toy_train(pairs, init_params(cfg), tc, cfg.pair_config(), nal=args.nal)
    first, last = res.losses[0], res.losses[-1]
    print(f"loss {first:.6f} -> {last:.6f} (ratio {last / first:.4f}) over {args.steps} steps")
    print("final: " + ", ".join(f"{n}={res.params.get(n):.6g}" for n in res.names))
    if args.trace:
        res.write_trace_csv(args.trace)


if __name__ == "__main__":
    main()
