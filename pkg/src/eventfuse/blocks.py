"""Reusable neural blocks: linear layers, MLPs, multi-head attention,
transformer decoder blocks and sinusoidal positional encodings.

Parameters are plain Tensors with requires_grad=True; blocks expose
named_parameters() so the trainer can address groups by prefix. Forward
passes hold parameters read-only, so concurrent forwards on separate tapes
are safe; updates require exclusive access.
"""

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def _init_affine(in_dim, out_dim, rng):
    bound = math.sqrt(1.0 / in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return Tensor(weight, requires_grad=True), Tensor(np.zeros(out_dim), requires_grad=True)


class Linear:
    """Affine map x @ W.T + b with weight stored (out_dim, in_dim)."""

    def __init__(self, in_dim, out_dim, rng):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight, self.bias = _init_affine(in_dim, out_dim, rng)

    def __call__(self, x):
        return T.affine(x, self.weight, self.bias)

    def named_parameters(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


class MLP:
    """Affine/GELU alternation; the final layer stays affine unless
    activate_final is set."""

    def __init__(self, dims, rng, activate_final=False):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        self.activate_final = activate_final

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.activate_final:
                x = T.gelu(x)
        return x

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}layer{i}."))
        return out


class MultiHeadAttention:
    """Standard multi-head attention over 2-d sequences (n, d_model).

    zero_out starts the output projection at zero, so the block is an exact
    no-op at initialization; useful when attention is bolted onto branches
    that were pre-trained without it."""

    def __init__(self, d_model, n_head, rng, zero_out=False):
        if d_model % n_head != 0:
            raise ShapeError(f"d_model {d_model} not divisible by n_head {n_head}")
        self.d_model = d_model
        self.n_head = n_head
        self.d_head = d_model // n_head
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)
        if zero_out:
            self.wo.weight.data[...] = 0.0

    def attend(self, q_seq, kv_seq, return_weights=False):
        if q_seq.shape[1] != self.d_model or kv_seq.shape[1] != self.d_model:
            raise ShapeError(
                f"attention feature dim mismatch: {q_seq.shape} / {kv_seq.shape} "
                f"vs d_model {self.d_model}"
            )
        q = self.wq(q_seq)
        k = self.wk(kv_seq)
        v = self.wv(kv_seq)
        inv_scale = 1.0 / math.sqrt(self.d_head)
        heads = []
        weights = []
        for h in range(self.n_head):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = T.slice_cols(q, lo, hi)
            kh = T.slice_cols(k, lo, hi)
            vh = T.slice_cols(v, lo, hi)
            logits = T.scale(T.matmul(qh, T.transpose(kh)), inv_scale)
            attn = T.softmax(logits, axis=-1)
            heads.append(T.matmul(attn, vh))
            if return_weights:
                weights.append(attn)
        out = self.wo(T.concat_cols(heads))
        if return_weights:
            return out, weights
        return out

    def named_parameters(self, prefix=""):
        out = []
        for tag, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.extend(lin.named_parameters(f"{prefix}{tag}."))
        return out


def cross_attention(block, q_seq, kv_seq, return_weights=False):
    """Attend q_seq over kv_seq and add the residual connection."""
    if return_weights:
        attended, weights = block.attend(q_seq, kv_seq, return_weights=True)
        return T.add(q_seq, attended), weights
    return T.add(q_seq, block.attend(q_seq, kv_seq))


class LayerNorm:
    """Row-wise layer norm with learned gain and shift."""

    def __init__(self, dim, eps=1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return T.add(T.mul(T.layernorm(x, self.eps), self.gain), self.shift)

    def named_parameters(self, prefix=""):
        return [(prefix + "gain", self.gain), (prefix + "shift", self.shift)]


class DecoderBlock:
    """Post-norm transformer block: self-attention then GELU feed-forward,
    each wrapped in residual + layer norm. Output shape equals input shape."""

    def __init__(self, d_model, n_head, rng, ff_mult=4):
        self.attn = MultiHeadAttention(d_model, n_head, rng)
        self.ln1 = LayerNorm(d_model)
        self.ln2 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, ff_mult * d_model, rng)
        self.ff2 = Linear(ff_mult * d_model, d_model, rng)

    def __call__(self, x):
        h = self.ln1(T.add(x, self.attn.attend(x, x)))
        ff = self.ff2(T.gelu(self.ff1(h)))
        return self.ln2(T.add(h, ff))

    def named_parameters(self, prefix=""):
        out = []
        out.extend(self.attn.named_parameters(prefix + "attn."))
        out.extend(self.ln1.named_parameters(prefix + "ln1."))
        out.extend(self.ln2.named_parameters(prefix + "ln2."))
        out.extend(self.ff1.named_parameters(prefix + "ff1."))
        out.extend(self.ff2.named_parameters(prefix + "ff2."))
        return out


def positional_encoding(step, dim):
    """Sinusoidal code: even slots sin(step / 10000^(2k/dim)), odd slots cos."""
    out = np.empty(dim)
    for k in range(0, dim, 2):
        freq = 1.0 / (10000.0 ** (k / dim))
        out[k] = math.sin(step * freq)
        if k + 1 < dim:
            out[k + 1] = math.cos(step * freq)
    return out


def positional_encoding_matrix(n_steps, dim):
    """Rows are positional_encoding(h, dim) for h = 1..n_steps."""
    return np.stack([positional_encoding(h, dim) for h in range(1, n_steps + 1)])
