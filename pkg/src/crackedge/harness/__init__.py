"""Desk-scale experiment harness: synthetic data, reference model, evaluation."""

from .evaluate import ConfusionMatrix, EvalReport, evaluate, report_to_json, write_report
from .reference import build_handcrafted_model
from .synth import SynthConfig, gen_synthetic_dataset

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "evaluate",
    "report_to_json",
    "write_report",
    "build_handcrafted_model",
    "SynthConfig",
    "gen_synthetic_dataset",
    "run_pipeline_cli",
]


def run_pipeline_cli(args):
    """CLI entry point (thin alias; the implementation lives in crackedge.cli)."""
    from ..cli import main

    return main(args)
