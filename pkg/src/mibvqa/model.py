"""Full VQA model: encoders, optional attention, fusion, optional bottleneck.

Parameter allocation order is fixed (encoders, attention if enabled, fusion,
bottleneck if enabled) and drawn from a single seeded generator, so a
(config, seed) pair pins every initial weight. Disabling a block removes
its parameters entirely rather than zeroing them out.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .attention import AttentionParams, AttentionResult, image_attention, query_attention
from .autodiff import Tensor, add, hadamard, scale, stack_rows
from .encoders import (
    EmbeddingConfig, EncoderParams, ImageObjectFeatures, QueryTokens,
    encode_image, encode_query, masked_mean,
)
from .fusion import (
    FusionParams, classify, cross_entropy, predict, project_image, project_query,
)
from .infomax import (
    BottleneckParams, LossBreakdown, encode_latent, mi_estimate,
    skl_gaussian, total_loss,
)


@dataclass(frozen=True)
class ModelConfig:
    """All widths plus the two architecture flags."""
    d_h: int = 32
    d_q: int = 32
    d_ff: int = 16
    d_p: int = 32
    d_f: int = 64
    d_mlp: int = 64
    d_z: int = 16
    t_max: int = 16
    k_max: int = 12
    vocab_size: int = 29
    d_raw: int = 8
    n_classes: int = 19
    enable_cross_attention: bool = True
    enable_infomax: bool = True

    def __post_init__(self):
        for name in ("d_h", "d_q", "d_ff", "d_p", "d_f", "d_mlp", "d_z",
                     "t_max", "k_max", "vocab_size", "d_raw", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ModelConfig.{name} must be positive")

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(d_h=self.d_h, d_q=self.d_q, t_max=self.t_max,
                               k_max=self.k_max, vocab_size=self.vocab_size,
                               d_raw=self.d_raw)

    def with_flags(self, cross_attention: bool, infomax: bool) -> "ModelConfig":
        return replace(self, enable_cross_attention=cross_attention,
                       enable_infomax=infomax)


@dataclass(frozen=True)
class ForwardResult:
    """Per-sample forward pass outputs.

    logits: [n_classes]; f_q / f_h: [d_f] post-FC embeddings feeding both
    the Hadamard fusion and (when enabled) the bottleneck encoders.
    Attention results are None when the attention block is disabled.
    """
    logits: Tensor
    f_q: Tensor
    f_h: Tensor
    query_attention: Optional[AttentionResult]
    image_attention: Optional[AttentionResult]


class VQAModel:
    """Bundles all parameter groups and the forward/loss computations."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        self.encoders = EncoderParams(config.embedding_config(), rng)
        self.attention = (AttentionParams(config.d_q, config.d_h, config.d_ff,
                                          config.d_p, rng)
                          if config.enable_cross_attention else None)
        self.fusion = FusionParams(config.d_q, config.d_h, config.n_classes,
                                   config.d_f, config.d_mlp, rng)
        self.bottleneck = (BottleneckParams(config.d_f, config.d_z, rng)
                           if config.enable_infomax else None)

    def parameters(self) -> list:
        params = list(self.encoders.parameters())
        if self.attention is not None:
            params.extend(self.attention.parameters())
        params.extend(self.fusion.parameters())
        if self.bottleneck is not None:
            params.extend(self.bottleneck.parameters())
        return params

    def parameter_map(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def n_parameters(self) -> int:
        return sum(p.tensor.data.size for p in self.parameters())

    def forward_sample(self, features: ImageObjectFeatures,
                       tokens: QueryTokens) -> ForwardResult:
        h = encode_image(features, self.encoders)
        q = encode_query(tokens, self.encoders)
        if self.attention is not None:
            q_att = query_attention(q, tokens.token_mask, self.attention)
            h_att = image_attention(h, q_att.pooled, features.object_mask,
                                    self.attention)
            q_star, h_star = q_att.pooled, h_att.pooled
        else:
            q_att = h_att = None
            q_star = masked_mean(q, tokens.token_mask)
            h_star = masked_mean(h, features.object_mask)
        f_q = project_query(q_star, self.fusion)
        f_h = project_image(h_star, self.fusion)
        logits = classify(hadamard(f_q, f_h), self.fusion)
        return ForwardResult(logits=logits, f_q=f_q, f_h=f_h,
                             query_attention=q_att, image_attention=h_att)

    def predict_sample(self, features: ImageObjectFeatures,
                       tokens: QueryTokens) -> int:
        """Answer index; never touches the bottleneck, so no sampling involved."""
        return predict(self.forward_sample(features, tokens).logits)

    def loss_batch(self, batch: Sequence[tuple], labels: np.ndarray,
                   lam: float = 1.0,
                   noise_q: Optional[np.ndarray] = None,
                   noise_h: Optional[np.ndarray] = None) -> LossBreakdown:
        """All loss terms over a batch of (features, tokens) pairs.

        With the bottleneck enabled, final = ce + lam * info_loss on one
        graph (lam = 0 still routes zero gradient to the bottleneck weights,
        keeping the optimizer contract intact). With it disabled, final IS
        the cross-entropy tensor and the info terms are constants.
        """
        if len(batch) == 0:
            raise ValueError("loss_batch: empty batch")
        results = [self.forward_sample(f, t) for f, t in batch]
        logits = stack_rows([r.logits for r in results])
        ce = cross_entropy(logits, labels)
        if self.bottleneck is None:
            zero = Tensor(np.zeros(()))
            return LossBreakdown(ce=ce, mi_estimate=zero, skl=zero,
                                 info_loss=zero, final=ce)
        b = len(batch)
        f_q = stack_rows([r.f_q for r in results])
        f_h = stack_rows([r.f_h for r in results])
        if noise_q is None:
            noise_q = np.zeros((b, self.config.d_z))
        if noise_h is None:
            noise_h = np.zeros((b, self.config.d_z))
        lat_q = encode_latent(f_q, "phi", self.bottleneck, noise_q)
        lat_h = encode_latent(f_h, "psi", self.bottleneck, noise_h)
        mi = mi_estimate(lat_q.sample, lat_h.sample, self.bottleneck.critic.tensor)
        skl_mean = scale(skl_gaussian(lat_q, lat_h), 1.0 / b)
        # same value as infomax.info_loss, assembled once to keep one graph
        info = add(scale(mi, -1.0), hadamard(self.bottleneck.gamma(), skl_mean))
        final = total_loss(ce, info, lam)
        return LossBreakdown(ce=ce, mi_estimate=mi, skl=skl_mean,
                             info_loss=info, final=final)
