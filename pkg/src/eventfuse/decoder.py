"""Horizon decoder: expand one fused context vector into a horizon-length
sequence, run a small transformer stack over it, and regress each step to
the target dimension.

Self-attention is unmasked: the expanded context is fully known up front,
nothing autoregressive is consumed. The regression head is shared across
horizon steps.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import MLP, DecoderBlock, Linear, positional_encoding_matrix
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class DecoderConfig:
    n_blocks: int = 3
    n_head: int = 16
    d_dec: int = 1024
    head_layers: int = 2
    horizon: int = 35
    d_y: int = 1

    def __post_init__(self):
        if self.n_blocks < 1 or self.head_layers < 1 or self.horizon < 1:
            raise ConfigError("decoder needs n_blocks, head_layers, horizon >= 1")
        if self.d_dec % self.n_head != 0:
            raise ConfigError(
                f"d_dec {self.d_dec} not divisible by n_head {self.n_head}"
            )


@dataclass
class Forecast:
    values: np.ndarray  # (horizon, d_y)


class HorizonDecoder:
    def __init__(self, fusion_dim, config, rng):
        self.config = config
        self.w_in = Linear(fusion_dim, config.d_dec, rng)
        self.blocks = [
            DecoderBlock(config.d_dec, config.n_head, rng)
            for _ in range(config.n_blocks)
        ]
        self.head = MLP(
            [config.d_dec] * (config.head_layers + 1), rng, activate_final=True
        )
        self.w_out = Linear(config.d_dec, config.d_y, rng)
        self._pe = Tensor(positional_encoding_matrix(config.horizon, config.d_dec))

    def expand(self, context):
        """(1, F) fused context -> (H, d_dec); rows differ only by the
        positional code."""
        base = self.w_in(context)
        return T.add(T.tile_rows(base, self.config.horizon), self._pe)

    def decode(self, expanded):
        x = expanded
        for block in self.blocks:
            x = block(x)
        return x

    def regress(self, hidden):
        """Per-step shared head -> (H, d_y)."""
        return self.w_out(self.head(hidden))

    def __call__(self, context):
        return self.regress(self.decode(self.expand(context)))

    def named_parameters(self, prefix=""):
        out = []
        out.extend(self.w_in.named_parameters(prefix + "w_in."))
        for i, block in enumerate(self.blocks):
            out.extend(block.named_parameters(f"{prefix}block{i}."))
        out.extend(self.head.named_parameters(prefix + "head."))
        out.extend(self.w_out.named_parameters(prefix + "w_out."))
        return out
