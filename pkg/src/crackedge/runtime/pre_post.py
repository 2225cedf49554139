"""Host-side image preprocessing and output post-processing.

These two stages run on the host CPU in the deployment this models: the
device consumes a 224x224x3 tensor in [0, 1] and hands back raw int8 logits.
"""

from __future__ import annotations

import numpy as np

from ..errors import WrongChannelCount
from ..graph import NET_INPUT_HW
from ..model_io import ImageBuffer, Label
from .execution import RawOutput

NET_INPUT_SIZE = (NET_INPUT_HW, NET_INPUT_HW)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling with edge clamping.

    src is (H, W, C) float64; an identity-size resize reproduces src exactly.
    """
    h, w, _ = src.shape
    fy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    fx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    dy = (fy - y0)[:, None, None]
    dx = (fx - x0)[None, :, None]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    rows0 = src[y0c]
    rows1 = src[y1c]
    top = rows0[:, x0c] * (1 - dx) + rows0[:, x1c] * dx
    bot = rows1[:, x0c] * (1 - dx) + rows1[:, x1c] * dx
    return top * (1 - dy) + bot * dy


def preprocess(img: ImageBuffer) -> np.ndarray:
    """RGB image -> (224, 224, 3) float32 in [0, 1]."""
    if img.channels != 3:
        raise WrongChannelCount(f"expected 3 channels, got {img.channels}")
    src = img.as_array().astype(np.float64)
    if (img.height, img.width) != NET_INPUT_SIZE:
        src = resize_bilinear(src, *NET_INPUT_SIZE)
    return (src / 255.0).astype(np.float32)


def postprocess(raw: RawOutput) -> tuple[np.ndarray, Label]:
    """Dequantize logits, apply stable softmax, pick the class (tie -> Negative)."""
    logits = raw.qparams.dequant(raw.logits_q)
    e = np.exp(logits - np.max(logits))
    probs = e / e.sum()
    predicted = Label.POSITIVE if probs[1] > probs[0] else Label.NEGATIVE
    return probs, predicted


def quant_predictor(qm, kernels=None):
    """Bind a QuantizedModel into an ImageBuffer -> (probs, Label) callable."""
    from .execution import run_quant

    def predict(img: ImageBuffer):
        return postprocess(run_quant(qm, preprocess(img), kernels=kernels))

    return predict


def float_predictor(model, kernels=None):
    """Float-path analogue of quant_predictor, for baseline comparisons."""
    from ..graph import OpKind
    from .execution import run_float

    has_softmax_head = bool(model.nodes) and model.nodes[-1].kind is OpKind.SOFTMAX

    def predict(img: ImageBuffer):
        out = run_float(model, preprocess(img), kernels=kernels)
        if has_softmax_head:
            probs = np.asarray(out, dtype=np.float64)
        else:
            e = np.exp(out - np.max(out))
            probs = e / e.sum()
        predicted = Label.POSITIVE if probs[1] > probs[0] else Label.NEGATIVE
        return probs, predicted

    return predict
