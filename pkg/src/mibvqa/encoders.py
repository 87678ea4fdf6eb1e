"""Trainable stand-in encoders for the image and query modalities.

The image side maps per-object raw descriptors (one-hot class, normalized
position, normalized size) to a row of object embeddings. The query side is
a learned token embedding followed by a unidirectional tanh recurrence, so
word order matters for comparison-style questions. Widths are config-driven
and desk-sized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    SIGNAL_INIT_SCALE, DimensionError, InvalidMaskError, Parameter, Tensor,
    add, add_row, mask_rows, matmul, matvec, relu, stack_rows, take_row, tanh,
    uniform_init, vecmat,
)


class VocabularyError(ValueError):
    """A token id falls outside the fixed vocabulary."""


@dataclass(frozen=True)
class EmbeddingConfig:
    """Widths and capacities shared by both encoders and everything downstream."""
    d_h: int = 32          # image object embedding width
    d_q: int = 32          # query token embedding width
    t_max: int = 16        # object slots per scene
    k_max: int = 12        # token slots per query
    vocab_size: int = 32
    d_raw: int = 8         # one-hot class (5) + x + y + size

    def __post_init__(self):
        for name in ("d_h", "d_q", "t_max", "k_max", "vocab_size", "d_raw"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EmbeddingConfig.{name} must be positive")


@dataclass(frozen=True)
class ImageObjectFeatures:
    """Per-object raw descriptor matrix [t_max, d_raw] plus a validity mask.

    Padded rows are all-zero and masked False; at least one row is real.
    """
    matrix: np.ndarray
    object_mask: np.ndarray

    def __post_init__(self):
        if not self.object_mask.any():
            raise ValueError("scene has no real objects")


@dataclass(frozen=True)
class QueryTokens:
    """Token ids [k_max] (PAD id in padded slots) plus a validity mask."""
    token_ids: np.ndarray
    token_mask: np.ndarray


class EncoderParams:
    """Parameters of both stand-in extractors.

    embed:  [vocab_size, d_q] token embedding table
    rec_w:  [d_q, d_q] tanh recurrence weight (no bias)
    img_w:  [d_raw, d_h], img_b: [d_h] per-object projection
    """

    def __init__(self, config: EmbeddingConfig, rng: np.random.Generator):
        c = config
        # embed entries drive the tanh directly: unit bound keeps the states
        # in the responsive part of tanh; rec_w stays at 1/sqrt(d) so the
        # recurrence neither saturates nor explodes over the token sequence
        self.embed = Parameter("enc.embed", rng.uniform(-1.0, 1.0, (c.vocab_size, c.d_q)))
        self.rec_w = Parameter("enc.rec_w", uniform_init(rng, (c.d_q, c.d_q), c.d_q))
        self.img_w = Parameter("enc.img_w", uniform_init(rng, (c.d_raw, c.d_h), c.d_raw,
                                                         SIGNAL_INIT_SCALE))
        self.img_b = Parameter("enc.img_b", np.zeros(c.d_h))

    def parameters(self):
        return [self.embed, self.rec_w, self.img_w, self.img_b]


def encode_image(features: ImageObjectFeatures, params: EncoderParams) -> Tensor:
    """Per-object rows relu(raw @ img_w + img_b), with padded rows forced to zero.

    Output [t_max, d_h]. Zeroing padded rows keeps them inert regardless of
    the bias, so they contribute neither values nor gradients.
    """
    x = Tensor(features.matrix)
    if x.shape[1] != params.img_w.tensor.shape[0]:
        raise DimensionError(
            f"feature width {x.shape[1]} != encoder d_raw {params.img_w.tensor.shape[0]}")
    h = relu(add_row(matmul(x, params.img_w.tensor), params.img_b.tensor))
    return mask_rows(h, features.object_mask)


def encode_query(tokens: QueryTokens, params: EncoderParams) -> Tensor:
    """Contextual token embeddings q_k = tanh(rec_w @ q_{k-1} + embed[token_k]).

    Output [k_max, d_q]. Rows at padded positions are computed (the PAD
    embedding feeds the recurrence after the real prefix) but excluded by the
    attention mask downstream; because padding is always a suffix, the real
    prefix rows depend only on the real tokens.
    """
    vocab = params.embed.tensor.shape[0]
    ids = np.asarray(tokens.token_ids, dtype=np.int64)
    if ids.min() < 0 or ids.max() >= vocab:
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise VocabularyError(f"token id {bad} outside vocabulary of size {vocab}")
    rows = []
    prev = Tensor(np.zeros(params.rec_w.tensor.shape[0]))
    for tok in ids:
        q_k = tanh(add(matvec(params.rec_w.tensor, prev),
                       take_row(params.embed.tensor, int(tok))))
        rows.append(q_k)
        prev = q_k
    return stack_rows(rows)


def masked_mean(rows: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of the unmasked rows; the no-attention baseline pooling."""
    keep = np.asarray(mask, dtype=bool)
    if not keep.any():
        raise InvalidMaskError("masked_mean: every row is masked")
    weights = Tensor(keep.astype(np.float64) / keep.sum())
    return vecmat(weights, rows)
