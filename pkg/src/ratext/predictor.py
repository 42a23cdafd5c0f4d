"""The predictor reads only what the selector kept.

Token embeddings are scaled by the mask before encoding, so a token with
m_i = 0 is invisible: its embedding row is exactly the zero vector, the
same as padding.  The pooled encoding is the dense rationale feature the
discriminator later inspects, and the prediction head on top of it is
shared with the guider (one set of weights, stored once).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import embed_steps, encode_steps, init_encoder, valid_mask
from .errors import ContractViolation
from .params import ParamStore, glorot

MODES = ("classification", "regression")


def init_predictor(store: ParamStore, vocab_size: int, embed_dim: int, hidden_dim: int,
                   num_outputs: int, rng: np.random.Generator, group: str = "generator") -> None:
    init_encoder(store, "pred", vocab_size, embed_dim, hidden_dim, rng, group)
    # shared prediction head: used by both the predictor and the guider
    store.add("head.W_p", glorot(rng, (2 * hidden_dim, num_outputs)), group)
    store.add("head.b_p", np.zeros(num_outputs), group)


def apply_head(params, z: Tensor, mode: str) -> Tensor:
    """Shared output head: class distribution or sigmoid-squashed score."""
    if mode not in MODES:
        raise ContractViolation(f"unknown mode {mode!r}")
    logits = ad.add(ad.matmul(z, params["head.W_p"]), params["head.b_p"])
    if mode == "classification":
        return ad.softmax(logits, axis=-1)
    return ad.sigmoid(logits)


def predict_masked_batch(params, ids: np.ndarray, m: Tensor, mode: str,
                         valid: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Masked forward pass over a (B, n) batch.

    ``m`` holds per-token mask values, relaxed or hard, shaped (B, n).
    Returns (features, predictions): features are the pooled (B, 2H)
    rationale encoding, predictions are (B, K) class probabilities or
    (B, 1) regression scores.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if m.data.shape != ids.shape:
        raise ContractViolation(
            f"mask shape {m.data.shape} does not match token shape {ids.shape}"
        )
    if valid is None:
        valid = valid_mask(ids)
    xs = embed_steps(params, "pred.emb", ids)
    masked = [ad.mul(x, m[:, t:t + 1]) for t, x in enumerate(xs)]
    _, pooled = encode_steps(params, "pred", masked, valid)
    return pooled, apply_head(params, pooled, mode)


def predict_masked(params, tokens: Sequence[int], m, mode: str) -> tuple[Tensor, Tensor]:
    """Single-sequence surface; returns ((2H,) features, predictions)."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    if not isinstance(m, Tensor):
        m = Tensor(np.asarray(m, dtype=float))
    m2 = ad.reshape(m, (1, ids.shape[1]))
    z, y = predict_masked_batch(params, ids, m2, mode)
    return z[0], (y[0] if mode == "classification" else y[0, 0])


def prediction_loss(y_hat: Tensor, labels, mode: str) -> Tensor:
    """Cross-entropy on clamped probabilities, or squared error.

    Batched inputs give the mean over instances; single predictions give
    the per-instance loss.
    """
    if mode == "classification":
        if y_hat.data.ndim == 1:
            label = int(labels)
            if not 0 <= label < y_hat.data.shape[0]:
                raise ContractViolation(
                    f"label {label} out of range for {y_hat.data.shape[0]} classes"
                )
            return ad.mul(ad.log_prob(y_hat[label]), -1.0)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= y_hat.data.shape[1]:
            raise ContractViolation(
                f"label out of range for {y_hat.data.shape[1]} classes"
            )
        picked = ad.gather_cols(y_hat, labels)
        return ad.mul(ad.tsum(ad.log_prob(picked)), -1.0 / y_hat.data.shape[0])
    if mode == "regression":
        targets = np.asarray(labels, dtype=float)
        if y_hat.data.ndim == 0:
            diff = ad.add(y_hat, -float(targets))
            return ad.mul(diff, diff)
        diff = ad.add(y_hat, Tensor(-targets.reshape(y_hat.data.shape)))
        return ad.tmean(ad.mul(diff, diff))
    raise ContractViolation(f"unknown mode {mode!r}")


def sp_loss(y_hat: Tensor, labels, mode: str) -> Tensor:
    """Task loss of the selector-predictor path (single-sample estimate)."""
    return prediction_loss(y_hat, labels, mode)
