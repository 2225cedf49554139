"""Per-image latency measurement with a pre / infer / post breakdown."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyBatch
from .execution import run_quant
from .pre_post import postprocess, preprocess


@dataclass(frozen=True)
class LatencyStats:
    n: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    min_ms: float
    max_ms: float
    pre_ms: float    # stage means
    infer_ms: float
    post_ms: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_ms": self.mean_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "pre_ms": self.pre_ms,
            "infer_ms": self.infer_ms,
            "post_ms": self.post_ms,
        }


def time_pipeline(qm, images, warmup: int = 0, kernels=None) -> LatencyStats:
    """Time preprocess / run_quant / postprocess per image, single-threaded.

    The first ``warmup`` images are executed but excluded from the stats
    (cache warming, allocator steady state). Timer is the monotonic
    high-resolution performance counter.
    """
    if len(images) - warmup < 1:
        raise EmptyBatch(
            f"{len(images)} image(s) with warmup {warmup} leaves nothing to measure"
        )
    pre, infer, post = [], [], []
    clock = time.perf_counter
    for img in images:
        t0 = clock()
        x = preprocess(img)
        t1 = clock()
        raw = run_quant(qm, x, kernels=kernels)
        t2 = clock()
        postprocess(raw)
        t3 = clock()
        pre.append(t1 - t0)
        infer.append(t2 - t1)
        post.append(t3 - t2)
    pre = np.asarray(pre[warmup:]) * 1e3
    infer = np.asarray(infer[warmup:]) * 1e3
    post = np.asarray(post[warmup:]) * 1e3
    total = pre + infer + post
    return LatencyStats(
        n=total.size,
        mean_ms=float(total.mean()),
        p50_ms=float(np.percentile(total, 50)),
        p95_ms=float(np.percentile(total, 95)),
        min_ms=float(total.min()),
        max_ms=float(total.max()),
        pre_ms=float(pre.mean()),
        infer_ms=float(infer.mean()),
        post_ms=float(post.mean()),
    )
