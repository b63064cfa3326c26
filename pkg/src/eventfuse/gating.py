"""Feature-wise two-way gated fusion supervised by a predictive-utility gap.

The gate MLP reads the concatenated pooled embeddings and emits one logit
per feature and modality; a two-way softmax turns them into convex
feature-wise weights. The supervision target is the per-instance loss gap
between a series-only decode and the fused decode, squashed through a
batch-scaled, clipped sigmoid. The gap and its target are constants for
the backward pass (stop-gradient); the gate input is detached as well, so
the gate loss can only move the gate MLP itself.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import MLP
from .errors import DataError
from .kernels import sigmoid_forward
from .tensor import Tensor


@dataclass
class GateOutcome:
    """Everything the gate produced for one instance."""

    text_weights: Tensor  # (1, F) on tape
    ts_weights: Tensor  # (1, F)
    openness: Tensor  # scalar, mean of text_weights
    fused: Tensor  # (1, F)
    loss_full: Tensor = None  # scalar MSE of fused decode
    loss_ts: Tensor = None  # scalar MSE of series-only decode
    utility_gap: float = None  # detached loss_ts - loss_full
    responsibility: float = None  # batch-scaled sigmoid target


class GateMLP:
    """Small MLP 2F -> hidden -> 2F producing text/series logits.

    The final layer starts at zero so every gate weight opens at exactly
    0.5; any later asymmetry is learned, not initialization noise."""

    def __init__(self, fusion_dim, rng, hidden=None):
        hidden = fusion_dim if hidden is None else hidden
        self.fusion_dim = fusion_dim
        self.mlp = MLP([2 * fusion_dim, hidden, 2 * fusion_dim], rng)
        self.mlp.layers[-1].weight.data[...] = 0.0

    def __call__(self, joint):
        return self.mlp(joint)

    def named_parameters(self, prefix=""):
        return self.mlp.named_parameters(prefix)


def gate_joint(event_emb, series_emb):
    """Detached gate input: the gate's own training signal must not leak
    into encoder or decoder parameters.

    The concatenated vector is standardized to unit rms. Pooled embeddings
    run one to two orders smaller than unit scale, which would starve the
    gate MLP's activations and make its few distillation steps ineffective;
    rescaling a detached constant changes no gradient path."""
    joint = np.concatenate([event_emb.data, series_emb.data], axis=1)
    rms = float(np.sqrt(np.mean(joint * joint)))
    return Tensor(joint / max(rms, 1e-12))


def gate_weights_from_joint(joint, gate_mlp, temperature):
    logits = gate_mlp(joint)
    f = gate_mlp.fusion_dim
    text_logit = T.slice_cols(logits, 0, f)
    ts_logit = T.slice_cols(logits, f, 2 * f)
    # two-way softmax == sigmoid of the scaled logit difference
    text_w = T.sigmoid(T.scale(T.sub(text_logit, ts_logit), 1.0 / temperature))
    ts_w = T.sub(Tensor(np.ones((1, f))), text_w)
    return text_w, ts_w


def gate_weights(event_emb, series_emb, gate_mlp, temperature):
    """Feature-wise modality weights from a two-way softmax over the gate
    MLP's per-feature logits."""
    return gate_weights_from_joint(
        gate_joint(event_emb, series_emb), gate_mlp, temperature
    )


def fuse(event_emb, series_emb, text_w, ts_w):
    """Elementwise convex combination of the two modality embeddings."""
    if event_emb.shape != series_emb.shape or event_emb.shape != text_w.shape:
        raise T.ShapeError(
            f"fuse shape mismatch: {event_emb.shape} / {series_emb.shape} / {text_w.shape}"
        )
    return T.add(T.mul(text_w, event_emb), T.mul(ts_w, series_emb))


def openness(text_w):
    """Scalar summary: mean text weight over features."""
    return T.tmean(text_w)


def granger_utility(fused, series_emb, target, decode_fn):
    """Decode both contexts with the same decoder and compare MSEs.

    Returns (loss_full, loss_ts, gap); the losses stay on tape, the gap is a
    detached float (positive when the text-augmented decode was better).
    """
    if isinstance(target, Tensor):
        y = target
    elif hasattr(target, "values"):
        y = Tensor(target.values)
    else:
        y = Tensor(target)
    pred_full = decode_fn(fused)
    pred_ts = decode_fn(series_emb)
    if pred_full.shape != y.shape:
        raise T.ShapeError(
            f"decoder output {pred_full.shape} does not match target {y.shape}"
        )
    loss_full = T.mse(pred_full, y)
    loss_ts = T.mse(pred_ts, y)
    gap = loss_ts.item() - loss_full.item()
    return loss_full, loss_ts, gap


def responsibility(gaps, gain, min_scale, clip_limit):
    """Batch-scaled, clipped sigmoid of the utility gaps (constant target).

    scale = max(mean |gap|, min_scale); each gap is divided by scale/gain,
    clipped to [-clip_limit, clip_limit] and squashed by the sigmoid.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    if gaps.size == 0:
        raise DataError("responsibility needs a nonempty batch of gaps")
    scale = max(float(np.mean(np.abs(gaps))), min_scale)
    temp = scale / gain
    return sigmoid_forward(np.clip(gaps / temp, -clip_limit, clip_limit))


def gate_loss(openness_values, targets):
    """Mean squared gap between gate openness and the constant targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(openness_values) != targets.size:
        raise T.ShapeError(
            f"gate loss length mismatch: {len(openness_values)} vs {targets.size}"
        )
    alpha = T.stack_rows([T.reshape(a, (1,)) for a in openness_values])
    resid = T.sub(alpha, Tensor(targets.reshape(-1, 1)))
    return T.tmean(T.mul(resid, resid))
