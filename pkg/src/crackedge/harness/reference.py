"""Hand-built weights for the reference topology: a crack detector by design.

The first conv bank turns luminance structure into non-negative "crack
evidence" maps (values in roughly [0, 0.4] given inputs in [0, 1]):

  ch 0   darkness: fires where the centre pixel's RGB mean drops below
         DARK_THRESHOLD — synthetic backgrounds never do, crack strokes
         always do, so this channel alone separates clean data.
  ch 1-4 oriented dark-line contrast (vertical / horizontal / two diagonals):
         side taps minus centre taps, thresholded by CONTRAST_BIAS to stay
         silent on background texture.
  ch 5   centre-surround spot detector for jag corners.
  ch 6-7 spare (zero), kept so the channel plan matches the topology widths.

Stages 2-6 consolidate evidence: output channel 0 box-sums the active input
channels over 3x3 with STAGE_GAIN/9 weighting, so the ~1/3 window coverage
of a thin line is roughly cancelled and evidence survives six max-pools.
fc1 unit 0 averages the final evidence grid, unit 1 reads its centre cell;
fc2 turns them into logits against a constant NEGATIVE_BIAS. All activation
ranges stay small and well-behaved, which is what lets the int8 model track
the float model closely.
"""

from __future__ import annotations

import numpy as np

from ..graph import ModelGraph, build_reference_net

CHANNELS = [8, 8, 16, 16, 32, 32]
HIDDEN = 64

DARK_THRESHOLD = 95.0 / 255.0
CONTRAST_BIAS = 25.0 / 255.0
STAGE_GAIN = 3.0
EVIDENCE_GAIN = 8.0    # fc2 weight on mean evidence
CENTER_GAIN = 1.0      # fc2 weight on centre-cell evidence
NEGATIVE_BIAS = 0.35   # constant logit the positive class must beat


def _conv1_weights() -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((8, 3, 3, 3), dtype=np.float32)
    b = np.zeros(8, dtype=np.float32)

    # ch0: negative mean of the centre pixel + threshold bias
    w[0, 1, 1, :] = -1.0 / 3.0
    b[0] = DARK_THRESHOLD

    # ch1 vertical line: bright side columns minus dark centre column
    w[1, :, (0, 2), :] = 1.0 / 18.0
    w[1, :, 1, :] = -1.0 / 9.0
    b[1] = -CONTRAST_BIAS

    # ch2 horizontal line
    w[2, (0, 2), :, :] = 1.0 / 18.0
    w[2, 1, :, :] = -1.0 / 9.0
    b[2] = -CONTRAST_BIAS

    # ch3 / ch4 diagonals: on-diagonal taps dark, the rest bright
    for ch, diag in ((3, ((0, 0), (1, 1), (2, 2))), (4, ((0, 2), (1, 1), (2, 0)))):
        w[ch, :, :, :] = 1.0 / 18.0
        for ky, kx in diag:
            w[ch, ky, kx, :] = -1.0 / 9.0
        b[ch] = -CONTRAST_BIAS

    # ch5 centre-surround
    w[5, :, :, :] = 1.0 / 24.0
    w[5, 1, 1, :] = -1.0 / 3.0
    b[5] = -CONTRAST_BIAS
    return w, b


def _stage_weights(out_c: int, in_c: int, n_active_in: int) -> np.ndarray:
    """Channel 0 box-sums the active input channels; other channels are dead."""
    w = np.zeros((out_c, 3, 3, in_c), dtype=np.float32)
    w[0, :, :, :n_active_in] = STAGE_GAIN / (9.0 * n_active_in)
    return w


def build_handcrafted_model() -> ModelGraph:
    """Reference-net topology carrying the analytic crack-detector weights."""
    graph = build_reference_net(CHANNELS, HIDDEN)
    new_weights = {}

    w1, b1 = _conv1_weights()
    new_weights["conv1.w"] = w1
    new_weights["conv1.b"] = b1

    in_c = CHANNELS[0]
    active = 6  # conv1 channels that carry signal
    for i, out_c in enumerate(CHANNELS[1:], start=2):
        new_weights[f"conv{i}.w"] = _stage_weights(out_c, in_c, active)
        active = 1  # downstream stages aggregate channel 0 only
        in_c = out_c

    # fc1: unit 0 = mean evidence over the 3x3 grid of channel 0,
    #      unit 1 = evidence at the centre cell. Flatten is row-major
    #      (y, x, c), so channel 0 of cell (y, x) sits at (y*3 + x) * C.
    last_c = CHANNELS[-1]
    fc1_w = np.zeros((HIDDEN, 3 * 3 * last_c), dtype=np.float32)
    for y in range(3):
        for x in range(3):
            fc1_w[0, (y * 3 + x) * last_c] = 1.0 / 9.0
    fc1_w[1, (1 * 3 + 1) * last_c] = 1.0
    new_weights["fc1.w"] = fc1_w

    fc2_w = np.zeros((2, HIDDEN), dtype=np.float32)
    fc2_b = np.zeros(2, dtype=np.float32)
    fc2_b[0] = NEGATIVE_BIAS
    fc2_w[1, 0] = EVIDENCE_GAIN
    fc2_w[1, 1] = CENTER_GAIN
    new_weights["fc2.w"] = fc2_w
    new_weights["fc2.b"] = fc2_b

    return graph.with_weights(new_weights).with_name("handcrafted-crack-net")
