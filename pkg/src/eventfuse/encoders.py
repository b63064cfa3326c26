"""Frozen surrogate encoders and the trainable projection heads.

The surrogates stand in for large pretrained text / time-series backbones:
deterministic featurizers seeded from one global constant, so the same
input encodes to bit-identical arrays on every run. They produce plain
numpy arrays (never Tensors with requires_grad), which keeps them outside
every tape: no gradient can reach surrogate internals.

Only the projection heads mapping the raw features into the shared fusion
dimension are trainable.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .blocks import MLP, positional_encoding_matrix
from .errors import DataError
from .tensor import Tensor

# One global constant seeds every surrogate table; changing it invalidates
# all frozen-output hashes in the test suite.
SURROGATE_SEED = 714025

ROLLING_WINDOW = 5


class EventCategory(enum.Enum):
    FOMC = "fomc"
    EMPLOYMENT = "employment"
    UNEMPLOYMENT_INSURANCE = "unemployment_insurance"
    CPI = "cpi"
    PPI = "ppi"
    GDP = "gdp"


CATEGORY_ORDER = list(EventCategory)


@dataclass
class EventScript:
    token_ids: list
    release_time: int
    category: EventCategory

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise DataError("event script must contain at least one token")


@dataclass
class MarketWindow:
    values: np.ndarray  # (lookback, d_x)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"market window must be (L, d_x), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("market window contains non-finite values")


@dataclass
class FutureSegment:
    values: np.ndarray  # (horizon, d_y)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError(f"future segment must be (H, d_y), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("future segment contains non-finite values")


@dataclass
class EmbeddingBatch:
    """Token-wise text states and step-wise series states in the shared dim."""

    text: Tensor  # (m, fusion_dim)
    ts: Tensor  # (L, fusion_dim)


class TextSurrogate:
    """Deterministic stand-in for a frozen language-model encoder.

    Output row j = token_embedding[token_j] + category vector + a sinusoidal
    position mix. Pure lookup arithmetic, no trainable state.
    """

    def __init__(self, vocab_size, raw_dim, position_scale=0.5, category_scale=0.5):
        self.vocab_size = vocab_size
        self.raw_dim = raw_dim
        self.position_scale = position_scale
        self.category_scale = category_scale
        rng = np.random.default_rng(np.random.PCG64(SURROGATE_SEED))
        self.table = rng.standard_normal((vocab_size, raw_dim))
        self.category_table = rng.standard_normal((len(CATEGORY_ORDER), raw_dim))
        self._pos_cache = {}

    def _positions(self, n):
        cached = self._pos_cache.get(n)
        if cached is None:
            cached = positional_encoding_matrix(n, self.raw_dim)
            self._pos_cache[n] = cached
        return cached

    def encode(self, script, include_positions=True):
        ids = np.asarray(script.token_ids, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise DataError(
                f"token id {bad} outside vocabulary [0, {self.vocab_size})"
            )
        out = self.table[ids].copy()
        out += self.category_scale * self.category_table[
            CATEGORY_ORDER.index(script.category)
        ]
        if include_positions:
            out += self.position_scale * self._positions(len(ids))
        return out


class TsSurrogate:
    """Deterministic stand-in for a frozen time-series foundation encoder.

    Per-step features (per input dim: value, first difference, trailing
    rolling mean and population std over 5 steps; plus relative position)
    pushed through a fixed random affine lift.
    """

    def __init__(self, d_x, raw_dim):
        self.d_x = d_x
        self.raw_dim = raw_dim
        self.n_features = 4 * d_x + 1
        rng = np.random.default_rng(np.random.PCG64(SURROGATE_SEED + 1))
        self.lift = rng.standard_normal((raw_dim, self.n_features)) / np.sqrt(
            self.n_features
        )

    def features(self, values):
        """(L, d_x) window -> (L, 4*d_x + 1) per-step feature matrix."""
        n = values.shape[0]
        cols = []
        for k in range(values.shape[1]):
            col = np.ascontiguousarray(values[:, k])
            diff = np.empty(n)
            diff[0] = 0.0
            diff[1:] = col[1:] - col[:-1]
            rmean, rstd = kernels.rolling_stats(col, ROLLING_WINDOW)
            cols.extend([col, diff, rmean, rstd])
        cols.append((np.arange(n) + 1.0) / n)
        return np.stack(cols, axis=1)

    def encode(self, window):
        values = window.values if isinstance(window, MarketWindow) else np.asarray(window)
        return self.features(values) @ self.lift.T


class ProjectionHead:
    """Trainable two-layer head mapping raw surrogate features into the
    shared fusion dimension. Depth is fixed; the hidden width is a knob."""

    def __init__(self, raw_dim, fusion_dim, rng, hidden=None):
        hidden = fusion_dim if hidden is None else hidden
        self.mlp = MLP([raw_dim, hidden, fusion_dim], rng)

    def __call__(self, raw):
        x = raw if isinstance(raw, Tensor) else Tensor(raw)
        return self.mlp(x)

    def named_parameters(self, prefix=""):
        return self.mlp.named_parameters(prefix)
