#!/usr/bin/env python3
"""Compare the compiled and the pure-numpy kernel backends end to end.

Builds the handcrafted classifier, quantizes and packs it exactly like the
CLI pipeline, then times preprocess+infer+postprocess per image for every
available backend on the same synthetic inputs.

Typical output on a desktop x86-64 (your numbers will differ):

    backend     mean      p50      p95    infer  images
    cython   19.21 ms  18.9 ms  21.2 ms  17.6 ms    100
    numpy    12.83 ms  12.6 ms  14.0 ms  10.4 ms    100

The naive compiled loops win on tiny ad-hoc shapes (no array temporaries),
but on this net's 224x224 convolutions the numpy backend's im2col + BLAS
matmul is the faster path. `auto` still prefers the compiled backend when
present; pass an explicit --backend to `run`/`eval` to override it.
"""

import argparse
import sys

import numpy as np

from crackedge.compat import default_kl520_profile, strip_unsupported_head
from crackedge.enef import pack, unpack
from crackedge.harness.reference import build_handcrafted_model
from crackedge.harness.synth import SynthConfig, render_image
from crackedge.model_io import image_from_array
from crackedge.optimize import collect_calibration_stats, quantize_model
from crackedge.runtime.backend import available_backends, get_kernels
from crackedge.runtime.pre_post import preprocess
from crackedge.runtime.timing import time_pipeline


def build_packed_model(images):
    model = build_handcrafted_model()
    stripped, _ = strip_unsupported_head(model, default_kl520_profile())
    idx = np.linspace(0, len(images) - 1, min(16, len(images))).astype(int)
    stats = collect_calibration_stats(stripped, [preprocess(images[i]) for i in idx])
    return unpack(pack(quantize_model(stripped, stats)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100, help="timed images per backend")
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--size", type=int, default=227, help="source image side")
    args = ap.parse_args(argv)

    cfg = SynthConfig(n_per_class=(args.n + args.warmup + 1) // 2 + 1,
                      width=args.size, height=args.size, seed=args.seed)
    images = []
    for i in range(cfg.n_per_class):
        for cls in (0, 1):
            images.append(image_from_array(render_image(cfg, cls, i)))
    images = images[: args.n + args.warmup]

    qm = build_packed_model(images)
    backends = available_backends()
    print(f"model: {qm.graph.name}  input {args.size}x{args.size}x3  "
          f"backends: {', '.join(backends)}")
    print(f"{'backend':>8} {'mean':>9} {'p50':>9} {'p95':>9} {'infer':>9} {'images':>7}")

    results = {}
    for name in backends:
        stats = time_pipeline(qm, images, warmup=args.warmup,
                              kernels=get_kernels(name))
        results[name] = stats
        print(f"{name:>8} {stats.mean_ms:7.2f} ms {stats.p50_ms:6.2f} ms "
              f"{stats.p95_ms:6.2f} ms {stats.infer_ms:6.2f} ms {stats.n:7d}")

    if len(results) > 1:
        names = sorted(results, key=lambda n: results[n].mean_ms)
        a, b = names[0], names[-1]
        ratio = results[b].mean_ms / results[a].mean_ms
        print(f"\n{a} is {ratio:.2f}x faster than {b} end-to-end on this net")
    return 0


if __name__ == "__main__":
    sys.exit(main())
