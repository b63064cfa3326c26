"""The full forecasting model: frozen surrogates, trainable projections,
alignment head, fusion gate, and horizon decoder, with stable parameter
naming so the trainer can freeze groups by prefix."""

from dataclasses import dataclass

import numpy as np

from .alignment import AlignmentHead, pool
from .decoder import DecoderConfig, HorizonDecoder
from .encoders import ProjectionHead, TextSurrogate, TsSurrogate
from .errors import ConfigError
from .gating import GateMLP


@dataclass
class ModelConfig:
    fusion_dim: int = 1024
    text_raw_dim: int = 64
    ts_raw_dim: int = 32
    proj_hidden: int = None  # defaults to fusion_dim
    align_heads: int = 8
    temp_instance: float = 0.1
    temp_align: float = 0.2
    temp_token: float = 0.07
    top_k_anchors: int = 256
    gate_hidden: int = None  # defaults to fusion_dim
    temp_gate: float = 1.0
    gain: float = 1.0
    min_scale: float = 1e-6
    clip_limit: float = 6.0
    decoder_blocks: int = 3
    decoder_heads: int = 16
    decoder_dim: int = None  # defaults to fusion_dim
    head_layers: int = 2

    def __post_init__(self):
        if self.proj_hidden is None:
            self.proj_hidden = self.fusion_dim
        if self.gate_hidden is None:
            self.gate_hidden = self.fusion_dim
        if self.decoder_dim is None:
            self.decoder_dim = self.fusion_dim
        if self.fusion_dim % self.align_heads != 0:
            raise ConfigError(
                f"fusion_dim {self.fusion_dim} not divisible by align_heads "
                f"{self.align_heads}"
            )
        if self.decoder_dim % self.decoder_heads != 0:
            raise ConfigError(
                f"decoder_dim {self.decoder_dim} not divisible by decoder_heads "
                f"{self.decoder_heads}"
            )
        for name in ("temp_instance", "temp_align", "temp_token", "temp_gate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.min_scale <= 0 or self.clip_limit <= 0 or self.gain <= 0:
            raise ConfigError("min_scale, clip_limit and gain must be positive")
        if self.top_k_anchors < 1:
            raise ConfigError("top_k_anchors must be >= 1")


# parameter-group prefixes, in construction order
GROUP_TEXT_PROJ = "text_proj"
GROUP_TS_PROJ = "ts_proj"
GROUP_ALIGN = "align"
GROUP_GATE = "gate"
GROUP_DECODER = "decoder"
ALL_GROUPS = (GROUP_TEXT_PROJ, GROUP_TS_PROJ, GROUP_ALIGN, GROUP_GATE, GROUP_DECODER)


class ForecastModel:
    """Construction order (and hence parameter order) is fixed so that runs
    with the same seed are bit-reproducible."""

    def __init__(self, config, vocab_size, d_x, d_y, horizon, seed=0):
        self.config = config
        self.vocab_size = vocab_size
        self.d_x = d_x
        self.d_y = d_y
        self.horizon = horizon
        self.seed = seed

        rng = np.random.default_rng(np.random.PCG64(seed))
        self.text_surrogate = TextSurrogate(vocab_size, config.text_raw_dim)
        self.ts_surrogate = TsSurrogate(d_x, config.ts_raw_dim)
        self.text_proj = ProjectionHead(
            config.text_raw_dim, config.fusion_dim, rng, hidden=config.proj_hidden
        )
        self.ts_proj = ProjectionHead(
            config.ts_raw_dim, config.fusion_dim, rng, hidden=config.proj_hidden
        )
        self.align = AlignmentHead(config.fusion_dim, config.align_heads, rng)
        self.gate = GateMLP(config.fusion_dim, rng, hidden=config.gate_hidden)
        self.decoder = HorizonDecoder(
            config.fusion_dim,
            DecoderConfig(
                n_blocks=config.decoder_blocks,
                n_head=config.decoder_heads,
                d_dec=config.decoder_dim,
                head_layers=config.head_layers,
                horizon=horizon,
                d_y=d_y,
            ),
            rng,
        )

    # ------------------------------------------------------------------
    # forward helpers (shared by training and evaluation)

    def encode_text(self, script):
        """Token-wise projected text states, (m, F)."""
        return self.text_proj(self.text_surrogate.encode(script))

    def encode_ts(self, window):
        """Step-wise projected series states, (L, F)."""
        return self.ts_proj(self.ts_surrogate.encode(window))

    def text_context(self, script):
        """Pooled projected text embedding (fusion bypassed)."""
        return pool(self.encode_text(script))

    def ts_context(self, window):
        """Pooled projected series embedding (fusion bypassed)."""
        return pool(self.encode_ts(window))

    def forecast(self, context):
        return self.decoder(context)

    # ------------------------------------------------------------------

    def named_parameters(self):
        params = []
        params.extend(self.text_proj.named_parameters(GROUP_TEXT_PROJ + "."))
        params.extend(self.ts_proj.named_parameters(GROUP_TS_PROJ + "."))
        params.extend(self.align.named_parameters(GROUP_ALIGN + "."))
        params.extend(self.gate.named_parameters(GROUP_GATE + "."))
        params.extend(self.decoder.named_parameters(GROUP_DECODER + "."))
        return dict(params)

    def group_parameters(self, groups):
        prefixes = tuple(g + "." for g in groups)
        return {
            name: p
            for name, p in self.named_parameters().items()
            if name.startswith(prefixes)
        }

    def rebuild_args(self):
        return {
            "vocab_size": self.vocab_size,
            "d_x": self.d_x,
            "d_y": self.d_y,
            "horizon": self.horizon,
            "seed": self.seed,
        }
