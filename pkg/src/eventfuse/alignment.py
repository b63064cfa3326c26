"""Cross-modal alignment at two granularities.

Instance level: bi-directional cross-attention interleaves the two
sequences, mean pooling gives one embedding per modality, and an InfoNCE
loss over in-batch negatives pulls matched pairs together.

Token/step level: separate learnable projections map the pre-attention
hidden states into a unit-norm alignment space; each high-salience token is
pulled toward a softmax-weighted convex combination of its own instance's
step embeddings ("soft positive") and pushed from every step of the other
instances in the batch.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import Linear, MultiHeadAttention, cross_attention
from .errors import DataError
from .tensor import NumericsError, Tensor


@dataclass
class InstanceEmbeddings:
    """Pooled per-instance event and series embeddings, shape (1, F) each."""

    event: Tensor
    series: Tensor


@dataclass
class SalienceProfile:
    scores: Tensor  # (m, 1) softmax over tokens, on tape
    anchors: np.ndarray  # indices of the top-k scores, ties -> lower index


@dataclass
class AlignmentSpace:
    """Unit-row token and step embeddings for one instance."""

    tokens: Tensor  # (m, F)
    steps: Tensor  # (L, F)


def bidirectional_interleave(text_states, ts_states, ca_text, ca_ts):
    """Cross-attend each modality over the other; shapes are preserved."""
    mixed_text = cross_attention(ca_text, text_states, ts_states)
    mixed_ts = cross_attention(ca_ts, ts_states, text_states)
    return mixed_text, mixed_ts


def pool(seq):
    """Mean over sequence rows -> (1, F)."""
    return T.tmean(seq, axis=0, keepdims=True)


def normalize_rows(a, min_norm=1e-12):
    """Row-wise l2 normalization; degenerate rows are a contract violation."""
    sq = T.tsum(T.mul(a, a), axis=-1, keepdims=True)
    if np.any(sq.data < min_norm * min_norm):
        raise NumericsError("cannot normalize a zero-norm embedding row")
    return T.div(a, T.sqrt(sq))


def instance_contrastive_loss(pairs, temperature):
    """InfoNCE over in-batch negatives.

    pairs: list of InstanceEmbeddings (or (series, event) tuples). For each
    instance the positive is its own event embedding; the negatives are the
    other instances' event embeddings.
    """
    if len(pairs) < 2:
        raise DataError("instance contrastive loss needs a batch of >= 2")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    series, events = [], []
    for p in pairs:
        s, t = (p.series, p.event) if isinstance(p, InstanceEmbeddings) else p
        series.append(T.reshape(s, (-1,)))
        events.append(T.reshape(t, (-1,)))
    s_mat = normalize_rows(T.stack_rows(series))
    t_mat = normalize_rows(T.stack_rows(events))
    logits = T.scale(T.matmul(s_mat, T.transpose(t_mat)), 1.0 / temperature)
    n = len(pairs)
    eye = Tensor(np.eye(n))
    positives = T.tsum(T.mul(logits, eye), axis=-1)
    lse = T.logsumexp(logits, axis=-1)
    return T.tmean(T.sub(lse, positives))


def token_step_similarity(token_space, step_space, temperature):
    """Similarity matrix between unit token and step rows plus its row-wise
    softmax (the token -> step attention distribution)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    sim = T.scale(T.matmul(token_space, T.transpose(step_space)), 1.0 / temperature)
    return sim, T.softmax(sim, axis=-1)


def soft_positive(attn, step_space):
    """Convex combinations of step embeddings, one row per token."""
    return T.matmul(attn, step_space)


def salience_and_anchors(text_states, scorer, top_k):
    """Linear salience scores softmaxed over tokens; anchors are the top_k
    indices with ties broken toward the lower index."""
    raw = T.matmul(text_states, T.transpose(scorer))  # (m, 1)
    scores = T.softmax(raw, axis=0)
    m = scores.shape[0]
    k = min(top_k, m)
    order = np.argsort(-scores.data[:, 0], kind="stable")
    anchors = np.sort(order[:k])
    return SalienceProfile(scores=scores, anchors=anchors)


def token_contrastive_loss(spaces, profiles, temp_nce, temp_align=0.2):
    """Salience-weighted InfoNCE linking anchor tokens to their soft
    positives, with negatives drawn from every step of the other instances.

    spaces: list of AlignmentSpace, one per instance.
    profiles: matching list of SalienceProfile.
    temp_nce scales the contrastive logits; temp_align shapes the
    token-to-step attention that builds the soft positives.
    """
    n = len(spaces)
    if n < 2:
        raise DataError("token contrastive loss needs cross-sample negatives (batch >= 2)")
    if temp_nce <= 0:
        raise ValueError("temperature must be positive")
    inv_t = 1.0 / temp_nce
    total = None
    for i, (space, profile) in enumerate(zip(spaces, profiles)):
        other_steps = T.concat_rows(
            [spaces[j].steps for j in range(n) if j != i]
        )
        _, attn = token_step_similarity(space.tokens, space.steps, temp_align)
        positives = soft_positive(attn, space.steps)
        inst_total = None
        for j in profile.anchors:
            tok = T.slice_rows(space.tokens, j, j + 1)  # (1, F)
            pos = T.slice_rows(positives, j, j + 1)
            pos_logit = T.scale(T.tsum(T.mul(tok, pos), axis=-1, keepdims=True), inv_t)
            neg_logits = T.scale(T.matmul(tok, T.transpose(other_steps)), inv_t)
            row = T.concat_cols([pos_logit, neg_logits])
            nll = T.sub(T.logsumexp(row, axis=-1, keepdims=True), pos_logit)
            weight = T.slice_rows(profile.scores, int(j), int(j) + 1)
            term = T.tsum(T.mul(weight, nll))
            inst_total = term if inst_total is None else T.add(inst_total, term)
        if inst_total is not None:
            total = inst_total if total is None else T.add(total, inst_total)
    if total is None:
        raise DataError("no anchor tokens in batch")
    return T.scale(total, 1.0 / n)


def alignment_loss(pairs, spaces, profiles, temp_instance, temp_token, temp_align=0.2):
    """Instance loss + token loss and their sum."""
    ctr = instance_contrastive_loss(pairs, temp_instance)
    tok = token_contrastive_loss(spaces, profiles, temp_token, temp_align)
    return ctr, tok, T.add(ctr, tok)


class AlignmentHead:
    """Trainable pieces of the alignment stack: two cross-attention blocks,
    the token/step alignment projections, and the salience scorer."""

    def __init__(self, fusion_dim, n_head, rng):
        # zero_out: interleaving starts as the identity, so the joint stage
        # begins exactly where the single-branch warm-ups left off
        self.ca_text = MultiHeadAttention(fusion_dim, n_head, rng, zero_out=True)
        self.ca_ts = MultiHeadAttention(fusion_dim, n_head, rng, zero_out=True)
        self.proj_tokens = Linear(fusion_dim, fusion_dim, rng)
        self.proj_steps = Linear(fusion_dim, fusion_dim, rng)
        bound = np.sqrt(1.0 / fusion_dim)
        self.scorer = Tensor(
            rng.uniform(-bound, bound, size=(1, fusion_dim)), requires_grad=True
        )

    def interleave(self, text_states, ts_states):
        return bidirectional_interleave(
            text_states, ts_states, self.ca_text, self.ca_ts
        )

    def spaces(self, text_states, ts_states):
        return AlignmentSpace(
            tokens=normalize_rows(self.proj_tokens(text_states)),
            steps=normalize_rows(self.proj_steps(ts_states)),
        )

    def salience(self, text_states, top_k):
        return salience_and_anchors(text_states, self.scorer, top_k)

    def named_parameters(self, prefix=""):
        out = []
        out.extend(self.ca_text.named_parameters(prefix + "ca_text."))
        out.extend(self.ca_ts.named_parameters(prefix + "ca_ts."))
        out.extend(self.proj_tokens.named_parameters(prefix + "proj_tokens."))
        out.extend(self.proj_steps.named_parameters(prefix + "proj_steps."))
        out.append((prefix + "scorer", self.scorer))
        return out
