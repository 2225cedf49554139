"""Command-line front end: the full compile-and-deploy flow as subcommands.

Exit codes: 0 success, 1 compatibility violations found, 2 any error.
File-producing commands write into the directory given by --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import compat, enef, optimize
from .errors import CrackEdgeError
from .graph import build_reference_net, validate_graph
from .harness.evaluate import evaluate, write_report
from .harness.reference import build_handcrafted_model
from .harness.synth import SynthConfig, gen_synthetic_dataset
from .model_io import load_dataset_dir, load_model, read_image, save_model
from .runtime.backend import available_backends, get_kernels
from .runtime.execution import run_quant
from .runtime.pre_post import postprocess, preprocess, quant_predictor
from .runtime.timing import time_pipeline

GRAPH_FILE = "graph.json"
WEIGHTS_FILE = "weights.bin"
STATS_FILE = "calib_stats.json"
ENEF_FILE = "model.enef"
REPORT_FILE = "report.json"


def _parent_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--profile", help="device profile JSON (default: built-in kl520)")
    p.add_argument("--seed", type=int, default=42, help="RNG seed where applicable")
    p.add_argument("--out", help="output directory")
    p.add_argument("--report", help="evaluation report path")
    return p


def _profile(args):
    if args.profile:
        return compat.load_profile(args.profile)
    return compat.default_kl520_profile()


def _need_out(args):
    if not args.out:
        raise CrackEdgeError("this command needs --out <dir>")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load(args):
    model = load_model(args.graph, args.weights)
    violations = validate_graph(model)
    if violations:
        raise CrackEdgeError("; ".join(str(v) for v in violations))
    return model


def _save_into(model, out_dir):
    gpath = os.path.join(out_dir, GRAPH_FILE)
    wpath = os.path.join(out_dir, WEIGHTS_FILE)
    save_model(model, gpath, wpath)
    print(f"wrote {gpath} and {wpath}")


def _kernels(args):
    return get_kernels(args.backend) if getattr(args, "backend", None) else None


def _calib_tensors(calib_dir, limit):
    samples = load_dataset_dir(calib_dir)
    if limit and len(samples) > limit:
        # spread across both classes: the list is negatives then positives
        idx = np.linspace(0, len(samples) - 1, limit).astype(int)
        samples = [samples[i] for i in idx]
    return [preprocess(s.image) for s in samples]


def cmd_synth(args):
    out = _need_out(args)
    cfg = SynthConfig(
        n_per_class=args.n, width=args.width, height=args.height,
        seed=args.seed, noise_amplitude=args.noise,
    )
    manifest = gen_synthetic_dataset(cfg, out)
    print(f"wrote {len(manifest)} images under {out}")
    return 0


def cmd_init_model(args):
    out = _need_out(args)
    if args.zero:
        channels = [int(c) for c in args.channels.split(",")]
        model = build_reference_net(channels, args.hidden)
    else:
        model = build_handcrafted_model()
    _save_into(model, out)
    return 0


def cmd_check(args):
    model = _load(args)
    violations = compat.check_compat(model, _profile(args))
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)")
        return 1
    est = compat.estimate_memory(model, quantized=True)
    print(f"ok: deployable, estimated {est} bytes quantized")
    return 0


def cmd_strip(args):
    out = _need_out(args)
    model = _load(args)
    stripped, removed = compat.strip_unsupported_head(model, _profile(args))
    for node in removed:
        print(f"removed {node.id} ({node.kind.value})")
    if not removed:
        print("nothing to strip")
    _save_into(stripped, out)
    return 0


def cmd_prune(args):
    out = _need_out(args)
    model = optimize.prune_magnitude(_load(args), args.sparsity)
    _save_into(model, out)
    return 0


def cmd_cluster(args):
    out = _need_out(args)
    model = optimize.cluster_weights(_load(args), args.k, args.max_iters)
    _save_into(model, out)
    return 0


def cmd_quantize(args):
    out = _need_out(args)
    model = _load(args)
    tensors = _calib_tensors(args.calib_dir, args.calib_limit)
    stats = optimize.collect_calibration_stats(model, tensors)
    path = os.path.join(out, STATS_FILE)
    with open(path, "w", encoding="utf-8") as f:
        f.write(stats.to_json())
    print(f"calibrated {len(stats.ranges)} tensors over {len(tensors)} images -> {path}")
    return 0


def cmd_pack(args):
    out = _need_out(args)
    model = _load(args)
    with open(args.stats, "r", encoding="utf-8") as f:
        stats = optimize.CalibrationStats.from_json(f.read())
    qm = optimize.quantize_model(model, stats)
    path = os.path.join(out, ENEF_FILE)
    profile = _profile(args)
    enef.write_archive(qm, path, {"model": model.name, "profile": profile.name})
    print(f"wrote {path} ({os.path.getsize(path)} bytes)")
    return 0


def cmd_run(args):
    qm, _ = enef.read_archive(args.enef)
    img = read_image(args.image)
    raw = run_quant(qm, preprocess(img), kernels=_kernels(args))
    probs, label = postprocess(raw)
    print(f"{label.name.title()} p={probs[label]:.4f}")
    return 0


def _eval_and_time(qm, data_dir, warmup, kernels, model_name, dataset_name):
    samples = load_dataset_dir(data_dir)
    report = evaluate(
        quant_predictor(qm, kernels=kernels), samples,
        model_name=model_name, dataset_name=dataset_name,
    )
    images = [s.image for s in samples]
    warmup = min(warmup, len(images) - 1)
    latency = time_pipeline(qm, images, warmup=warmup, kernels=kernels)
    return report, latency


def cmd_eval(args):
    qm, meta = enef.read_archive(args.enef)
    report, latency = _eval_and_time(
        qm, args.data, args.warmup, _kernels(args),
        meta.get("model", ""), os.path.basename(os.path.normpath(args.data)),
    )
    report = dataclasses.replace(report, latency=latency)
    m = report.matrix
    print(f"accuracy {report.accuracy:.4f}  (tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn})")
    print(f"latency mean {latency.mean_ms:.2f} ms  p50 {latency.p50_ms:.2f}  "
          f"p95 {latency.p95_ms:.2f}  (pre {latency.pre_ms:.2f} / infer "
          f"{latency.infer_ms:.2f} / post {latency.post_ms:.2f})")
    if args.report:
        write_report(report, args.report)
        print(f"wrote {args.report}")
    return 0


def cmd_bench(args):
    qm, _ = enef.read_archive(args.enef)
    samples = load_dataset_dir(args.data)
    images = [s.image for s in samples][: args.n] if args.n else [s.image for s in samples]
    names = available_backends() if args.backend == "both" else [args.backend]
    for name in names:
        kernels = get_kernels(name)
        warmup = min(args.warmup, len(images) - 1)
        stats = time_pipeline(qm, images, warmup=warmup, kernels=kernels)
        print(f"{name:>7}: mean {stats.mean_ms:8.2f} ms  p50 {stats.p50_ms:8.2f}  "
              f"p95 {stats.p95_ms:8.2f}  infer {stats.infer_ms:8.2f}  (n={stats.n})")
    return 0


def cmd_pipeline(args):
    out = _need_out(args)
    profile = _profile(args)
    model = _load(args)

    violations = compat.check_compat(model, profile)
    for v in violations:
        print(f"check: {v}")
    stripped, removed = compat.strip_unsupported_head(model, profile)
    for node in removed:
        print(f"strip: removed {node.id} ({node.kind.value})")
    remaining = compat.check_compat(stripped, profile)
    if remaining:
        for v in remaining:
            print(f"check: still violating: {v}")
        return 1

    calib_dir = args.calib_dir or args.data
    tensors = _calib_tensors(calib_dir, args.calib_limit)
    stats = optimize.collect_calibration_stats(stripped, tensors)
    qm = optimize.quantize_model(stripped, stats)
    enef_path = os.path.join(out, ENEF_FILE)
    enef.write_archive(qm, enef_path, {"model": model.name, "profile": profile.name})
    print(f"packed {enef_path} ({os.path.getsize(enef_path)} bytes)")

    device_qm, meta = enef.read_archive(enef_path)  # run from the archive
    report, latency = _eval_and_time(
        device_qm, args.data, args.warmup, _kernels(args),
        meta.get("model", ""), os.path.basename(os.path.normpath(args.data)),
    )
    report = dataclasses.replace(report, latency=latency)
    m = report.matrix
    print(f"accuracy {report.accuracy:.4f}  (tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn})")
    print(f"latency mean {latency.mean_ms:.2f} ms (pre {latency.pre_ms:.2f} / "
          f"infer {latency.infer_ms:.2f} / post {latency.post_ms:.2f})")
    report_path = args.report or os.path.join(out, REPORT_FILE)
    write_report(report, report_path)
    print(f"wrote {report_path}")
    return 0


def build_parser():
    parent = _parent_parser()
    parser = argparse.ArgumentParser(
        prog="crackedge",
        description="Compile a float CNN for an int8 edge device and run it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[parent], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=100, help="images per class")
    p.add_argument("--width", type=int, default=227)
    p.add_argument("--height", type=int, default=227)
    p.add_argument("--noise", type=int, default=40, help="noise amplitude 0-255")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-model", parents=[parent],
                       help="write the reference model files")
    p.add_argument("--zero", action="store_true",
                   help="zero weights instead of the handcrafted detector")
    p.add_argument("--channels", default="8,8,16,16,32,32")
    p.add_argument("--hidden", type=int, default=64)
    p.set_defaults(func=cmd_init_model)

    def model_args(p):
        p.add_argument("--graph", required=True, help="graph descriptor JSON")
        p.add_argument("--weights", required=True, help="weights blob")

    p = sub.add_parser("check", parents=[parent], help="device compatibility check")
    model_args(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("strip", parents=[parent],
                       help="remove the unsupported chain tail")
    model_args(p)
    p.set_defaults(func=cmd_strip)

    p = sub.add_parser("prune", parents=[parent], help="magnitude-prune weights")
    model_args(p)
    p.add_argument("--sparsity", type=float, required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("cluster", parents=[parent], help="k-means weight clustering")
    model_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=50)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("quantize", parents=[parent],
                       help="calibrate activation ranges")
    model_args(p)
    p.add_argument("--calib-dir", required=True)
    p.add_argument("--calib-limit", type=int, default=64)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("pack", parents=[parent],
                       help="quantize + pack into an .enef archive")
    model_args(p)
    p.add_argument("--stats", required=True, help="calibration stats JSON")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("run", parents=[parent], help="classify one image")
    p.add_argument("--enef", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--backend", choices=["auto", "cython", "numpy"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[parent], help="accuracy + latency on a dataset")
    p.add_argument("--enef", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--backend", choices=["auto", "cython", "numpy"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[parent], help="compare kernel backends")
    p.add_argument("--enef", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=0, help="limit image count")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--backend", choices=["auto", "cython", "numpy", "both"],
                   default="both")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", parents=[parent],
                       help="check, strip, quantize, pack, then evaluate")
    model_args(p)
    p.add_argument("--data", required=True, help="labeled evaluation dataset")
    p.add_argument("--calib-dir", help="calibration dataset (default: --data)")
    p.add_argument("--calib-limit", type=int, default=32)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--backend", choices=["auto", "cython", "numpy"])
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CrackEdgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
