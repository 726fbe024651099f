"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Config precedence: built-in defaults < ``--config`` file < command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, init_params
from .errors import EquiROError, UsageError
from .radar_cloud import fmt

log = logging.getLogger("equiro")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _round(obj):
    if isinstance(obj, float):
        return float(fmt(obj)) if np.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _round(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _out_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"output directory {p} does not exist")
    return p


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "niv", False):
        cfg.niv = True
    if getattr(args, "nal", False):
        cfg.nal = True
    return cfg


# -- commands ------------------------------------------------------------

def cmd_synth(args) -> int:
    from .radar_cloud import write_frame_csv, write_manifest
    from .synth import SceneSpec, generate_sequence, get_preset, write_labels_csv
    from .evaluation import write_tum

    out = _out_dir(args.out)
    if bool(args.preset) == bool(args.spec):
        raise UsageError("give exactly one of --preset or --spec")
    spec = get_preset(args.preset) if args.preset else SceneSpec.load(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.noiseless:
        from .synth import Noise
        spec = dataclasses.replace(spec, noise=Noise())
    seq, gt = generate_sequence(spec)
    entries = []
    for k, (frame, labels) in enumerate(zip(seq.frames, gt.labels)):
        fname, lname = f"frame_{k:04d}.csv", f"labels_{k:04d}.csv"
        write_frame_csv(frame, out / fname)
        write_labels_csv(labels, out / lname)
        entries.append({"path": fname, "timestamp": float(fmt(frame.timestamp)), "labels": lname})
    write_tum(gt.trajectory(), out / "gt.tum")
    write_manifest(out / "manifest.json", entries, "gt.tum")
    spec.save(out / "scene.json")
    print(f"wrote {len(seq)} frames to {out}")
    return 0


def cmd_odometry(args) -> int:
    from .equinet import load_params
    from .evaluation import read_tum, run_benchmark, write_segments_csv, write_tum
    from .radar_cloud import read_sequence

    cfg = load_config(args)
    out = _out_dir(args.out)
    seq = read_sequence(args.manifest)
    gt = read_tum(seq.ground_truth_path) if seq.ground_truth_path else None
    params = init_params(cfg)
    if args.params:
        params = dataclasses.replace(params, equinet=load_params(args.params))
    threads = args.threads or os.cpu_count() or 1
    res = run_benchmark(seq, args.method, cfg, params, gt=gt, threads=threads)
    write_tum(res.trajectory, out / "trajectory.tum")
    dump_json(res.record(), out / "metrics.json")
    if res.metrics is not None:
        write_segments_csv(res.metrics, out / "segments.csv")
        m = res.metrics
        print(f"{args.method}: t_rel {m.t_rel:.4f} %  r_rel {m.r_rel:.6f} deg/m  "
              f"failures {len(res.failures)}")
    else:
        print(f"{args.method}: no ground truth; trajectory only, failures {len(res.failures)}")
    if args.diagnostics:
        with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as fh:
            for d in res.diagnostics:
                fh.write(json.dumps(_round(d), sort_keys=True) + "\n")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import read_tum, relative_errors, write_segments_csv

    est = read_tum(args.est)
    gt = read_tum(args.gt)
    segs = args.segments or PipelineConfig().eval.segment_lengths
    m = relative_errors(est.rebased(), gt.rebased(), segs)
    text = dump_json({"segment_lengths": list(segs), **m.as_dict()}, args.out)
    if args.segments_csv:
        write_segments_csv(m, args.segments_csv)
    print(text, end="")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(args.seed or 0)
    for r in results:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.name}: {r.detail} ({r.seconds:.2f} s)")
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return 3 if failed else 0


def cmd_inspect(args) -> int:
    from .graph import build_graph, graph_stats, write_edge_csv
    from .preprocess import compensate_node_velocities, estimate_ego_velocity
    from .radar_cloud import read_frame_csv

    cfg = load_config(args)
    frame = read_frame_csv(args.frame)
    ego = estimate_ego_velocity(frame, cfg.irls)
    cf = compensate_node_velocities(frame, ego.v_ego, cfg.niv)
    g = build_graph(cf, cfg.graph)
    report = {
        "points": len(frame),
        "v_ego": ego.v_ego.tolist(),
        "irls_iterations": ego.iterations_used,
        "irls_converged": ego.converged,
        "graph": graph_stats(g).as_dict(),
        "graph_config": dataclasses.asdict(cfg.graph),
    }
    print(dump_json(report), end="")
    if args.graph_out:
        write_edge_csv(g, args.graph_out)
    return 0


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt_cls = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="equiro", description="4D radar odometry with equivariant features.",
                formatter_class=fmt_cls)
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, pipeline=True):
        sp.add_argument("--seed", type=int, default=None,
                        help="global seed (u64); overrides the config/scene seed")
        if pipeline:
            sp.add_argument("--config", default=None, help="pipeline JSON config file")
            sp.add_argument("--niv", action="store_true",
                            help="ablation: raw Doppler node velocities, plain edge differences")
            sp.add_argument("--nal", action="store_true",
                            help="ablation: fixed loss weights s_r=-8, s_t=-3, no pitch/yaw terms")

    sp = sub.add_parser("synth", help="generate a synthetic radar sequence",
                        formatter_class=fmt_cls)
    sp.add_argument("--preset", default=None,
                    help="named scene: straight, turn90, dynamic20, sparse_noisy")
    sp.add_argument("--spec", default=None, help="scene spec JSON file (instead of --preset)")
    sp.add_argument("--out", required=True, help="existing output directory")
    sp.add_argument("--noiseless", action="store_true", help="zero all noise sigmas")
    common(sp, pipeline=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("odometry", help="run odometry on a sequence and score it",
                        formatter_class=fmt_cls)
    sp.add_argument("manifest", help="sequence manifest JSON")
    sp.add_argument("--method", default="equi_ro",
                    choices=["equi_ro", "equi_ro_oracle", "icp"], help="registration method")
    sp.add_argument("--out", required=True, help="existing output directory")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: available cores); results do not depend on it")
    sp.add_argument("--diagnostics", action="store_true",
                    help="write per-pair diagnostics as JSON lines")
    sp.add_argument("--params", default=None, help="network checkpoint file")
    common(sp)
    sp.set_defaults(func=cmd_odometry)

    sp = sub.add_parser("eval", help="relative trajectory errors between two TUM files",
                        formatter_class=fmt_cls)
    sp.add_argument("est", help="estimated trajectory (TUM)")
    sp.add_argument("gt", help="ground-truth trajectory (TUM)")
    sp.add_argument("--segments", type=float, nargs="+", default=None,
                    help="segment lengths in meters (default: 10 20 30 40)")
    sp.add_argument("--out", default=None, help="metrics JSON output path")
    sp.add_argument("--segments-csv", default=None, help="per-segment CSV output path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("selftest", help="run the embedded property suites",
                        formatter_class=fmt_cls)
    sp.add_argument("--seed", type=int, default=0, help="seed for all properties")
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("inspect", help="ego-velocity and graph statistics of one frame",
                        formatter_class=fmt_cls)
    sp.add_argument("frame", help="frame CSV (x,y,z,doppler,rcs)")
    sp.add_argument("--graph-out", default=None, help="write the edge list CSV (i,j,v_ij,dist)")
    common(sp)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EquiROError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
