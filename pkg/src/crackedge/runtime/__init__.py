"""Executors and host-side processing: float reference, int8 device path."""

from .backend import available_backends, get_kernels
from .execution import RawOutput, run_float, run_float_trace, run_quant
from .pre_post import postprocess, preprocess
from .timing import LatencyStats, time_pipeline

__all__ = [
    "available_backends",
    "get_kernels",
    "RawOutput",
    "run_float",
    "run_float_trace",
    "run_quant",
    "preprocess",
    "postprocess",
    "LatencyStats",
    "time_pipeline",
]
