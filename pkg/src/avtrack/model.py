"""Full tracker network: encoder ladder, decoder, twin heads."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderParams,
    TargetState,
    avit_encode,
)
from .predictor import DecoderParams, HeadParams, df_dec, head_forward
from .tensor import Tensor, reshape, slice_rows


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_depth: int = 4
    sigma_factor: float = 0.25
    ffn_activation: str = "gelu"
    use_jse: bool = True
    use_adaptor: bool = True
    plain_decoder: bool = False

    def with_switches(self, disable_jse=False, disable_adaptor=False,
                      plain_decoder=False) -> "ModelConfig":
        return replace(self,
                       use_jse=self.use_jse and not disable_jse,
                       use_adaptor=self.use_adaptor and not disable_adaptor,
                       plain_decoder=self.plain_decoder or plain_decoder)


class TrackerNet:
    """Parameters plus the forward pass from raw frames to prediction maps."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        enc = config.encoder
        rng = np.random.default_rng(seed)
        self.encoder = EncoderParams.init(rng, enc)
        self.decoder = DecoderParams.init(
            rng, enc.channels, enc.heads, enc.ffn_ratio,
            depth=config.decoder_depth,
            dense_fusion=not config.plain_decoder,
            zero_centered=not config.plain_decoder,
        )
        self.heads = HeadParams.init(rng, enc.channels)
        if config.ffn_activation != "gelu":
            for layer in self.encoder.vit_layers:
                layer.ffn.activation = config.ffn_activation
            for a in self.encoder.adaptors:
                a.ffn.activation = config.ffn_activation
            for layer in self.decoder.layers:
                layer.ffn.activation = config.ffn_activation

    def named_parameters(self):
        yield from self.encoder.named_parameters("encoder")
        yield from self.decoder.named_parameters("decoder")
        yield from self.heads.named_parameters("heads")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def forward_maps(self, frames: list[Tensor], states: list[TargetState]
                     ) -> tuple[Tensor, Tensor]:
        """Returns (score_map [g,g], ltrb_map [g,g,4]) for the test frame."""
        cfg = self.config
        enc = cfg.encoder
        f = avit_encode(frames, states, self.encoder, enc,
                        use_jse=cfg.use_jse, use_adaptor=cfg.use_adaptor)
        w = df_dec(f, self.decoder)
        per = enc.tokens_per_frame
        f_test = slice_rows(f, enc.train_frames * per, (enc.train_frames + 1) * per)
        ltrb = head_forward(w, f_test, self.heads, "regression", enc.grid)
        cls = head_forward(w, f_test, self.heads, "classification", enc.grid)
        return reshape(cls, (enc.grid, enc.grid)), ltrb

    # -- checkpoint plumbing -------------------------------------------------

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        return [(name, t.data) for name, t in self.named_parameters()]

    def load_state(self, items: dict[str, np.ndarray]):
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(items))
        extra = sorted(set(items) - set(mine))
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {missing[:3]}, "
                             f"unexpected {extra[:3]}")
        for name, t in mine.items():
            t.assign_(items[name])
