"""Token selection: per-token keep probabilities, relaxed Bernoulli
sampling, and the sparsity prior on the selection distribution.

Each token gets an independent keep probability p_i from a linear head
over the encoder state.  Training samples a relaxed mask through the
Gumbel reparameterization of a two-way concrete variable:

    m_i = sigmoid((log p_i - log(1 - p_i) + g1 - g0) / tau)

with g = -log(-log u), u ~ U(0, 1).  Because g1 - g0 follows a standard
logistic distribution, P(m_i > 0.5) equals p_i exactly at any
temperature.  Inference thresholds the probabilities instead (p_i > 0.5)
with no noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import encode_ids, init_encoder
from .errors import ContractViolation
from .params import ParamStore, glorot

PROB_EPS = 1e-7


@dataclass
class RelaxedMask:
    """A sampled (or thresholded) mask with its sampling record.

    ``m`` has one entry per token in (0, 1) for relaxed samples and in
    {0, 1} for hard masks.  ``g1``/``g0`` hold the Gumbel draws used, and
    are ``None`` for hard masks, which are noise-free.
    """

    m: Tensor
    tau: float
    g1: np.ndarray | None = None
    g0: np.ndarray | None = None
    hard: bool = False


def init_selector(store: ParamStore, vocab_size: int, embed_dim: int, hidden_dim: int,
                  rng: np.random.Generator, group: str = "generator") -> None:
    init_encoder(store, "sel", vocab_size, embed_dim, hidden_dim, rng, group)
    store.add("sel.head.w", glorot(rng, (2 * hidden_dim, 1)), group)
    store.add("sel.head.b", np.zeros(1), group)


def select_probs_batch(params, ids: np.ndarray, valid: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Keep probabilities for a (B, n) batch; returns (probs, valid).

    Probabilities are clamped to [1e-7, 1 - 1e-7].  Pad positions are
    overwritten with the constant 1e-7 and contribute no gradient.
    """
    states, _, valid = encode_ids(params, "sel", ids, valid)
    w, b = params["sel.head.w"], params["sel.head.b"]
    cols = [ad.matmul(h, w) for h in states]
    logits = ad.add(ad.concat(cols, axis=1), b)
    p = ad.clamp(ad.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
    v = Tensor(valid)
    p = ad.add(ad.mul(p, v), Tensor((1.0 - valid) * PROB_EPS))
    return p, valid


def select_probs(params, tokens: Sequence[int]) -> Tensor:
    """Keep probabilities (n,) for one token sequence."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    p, _ = select_probs_batch(params, ids)
    return p[0]


def gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel draws, g = -log(-log u)."""
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def sample_mask(p: Tensor, tau: float, rng: np.random.Generator | None = None,
                noise: tuple[np.ndarray, np.ndarray] | None = None,
                hard: bool = False) -> RelaxedMask:
    """Sample a relaxed mask from keep probabilities.

    Pass either ``rng`` (fresh Gumbel draws) or ``noise`` (a (g1, g0)
    pair to reuse).  ``hard=True`` thresholds the probabilities at 0.5
    and ignores noise entirely.
    """
    if hard:
        return RelaxedMask(m=Tensor((p.data > 0.5).astype(p.data.dtype)), tau=tau, hard=True)
    if tau <= 0.0:
        raise ContractViolation(f"temperature must be positive, got {tau}")
    if noise is None:
        if rng is None:
            raise ContractViolation("sample_mask needs an rng or explicit noise")
        g1 = gumbel(rng, p.data.shape)
        g0 = gumbel(rng, p.data.shape)
    else:
        g1, g0 = noise
        if g1.shape != p.data.shape or g0.shape != p.data.shape:
            raise ContractViolation("noise shape does not match probabilities")
    logit = ad.add(ad.log_prob(p), ad.mul(ad.log_prob(ad.add(ad.mul(p, -1.0), 1.0)), -1.0))
    m = ad.sigmoid(ad.mul(ad.add(logit, Tensor(g1 - g0)), 1.0 / tau))
    return RelaxedMask(m=m, tau=tau, g1=g1, g0=g0)


def hard_mask(p: Tensor, valid: np.ndarray | None = None) -> np.ndarray:
    """Deterministic selection: 1 where p > 0.5 (and the token is real)."""
    m = (p.data > 0.5).astype(np.int64)
    if valid is not None:
        m = m * (np.asarray(valid) > 0)
    return m


def ib_loss(p: Tensor, r_select: float, valid: np.ndarray | None = None) -> Tensor:
    """KL between per-token selection distributions and a Bernoulli prior.

    Sums over tokens:  p log(p/r) + (1-p) log((1-p)/(1-r)).
    For a batch, pad positions are excluded and the result is the mean
    over instances.
    """
    if not 0.0 < r_select < 1.0:
        raise ContractViolation(f"r_select must lie in (0, 1), got {r_select}")
    one_minus_p = ad.add(ad.mul(p, -1.0), 1.0)
    kl = ad.add(
        ad.mul(p, ad.add(ad.log_prob(p), -float(np.log(r_select)))),
        ad.mul(one_minus_p, ad.add(ad.log_prob(one_minus_p), -float(np.log(1.0 - r_select)))),
    )
    if p.data.ndim == 1:
        if valid is not None:
            kl = ad.mul(kl, Tensor(np.asarray(valid, dtype=float)))
        return ad.tsum(kl)
    if valid is not None:
        kl = ad.mul(kl, Tensor(np.asarray(valid, dtype=float)))
    return ad.mul(ad.tsum(kl), 1.0 / p.data.shape[0])
