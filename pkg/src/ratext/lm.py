"""A small recurrent language model used as a fluency prior.

The model scores each position with a bilinear form between the hidden
state encoding the unmasked prefix and an output embedding of the
current token:

    s_i = h_i^T M e(x_i),    p(m_i x_i | x_<i) = sigmoid(m_i * s_i)

Scaling the score by the mask value means an unselected token (m_i = 0)
always gets probability 1/2, so the regularizer

    L_lm = - sum_{i >= 1} m_{i-1} * log p(m_i x_i | x_<i)

only pays attention where the previous token was kept.  Runs of kept
tokens are cheap exactly when the language model finds them fluent,
which pushes selection toward consecutive spans.

Pretraining maximizes sigmoid scores of observed tokens against
negatives drawn from the corpus unigram distribution.  After
pretraining the model is frozen: during rationale training its scores
enter the graph as constants and only the mask carries gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import embed_steps, gru_scan, init_embedding, init_gru, valid_mask
from .errors import ContractViolation, DataError, NumericFault
from .optim import AdamState, adam_step
from .params import ParamStore, glorot

PROB_EPS = 1e-7
LM_TAG = "lm"


@dataclass
class LanguageModel:
    store: ParamStore
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    out_dim: int
    unigram: np.ndarray
    frozen: bool = False
    loss_history: list[float] = field(default_factory=list)


def lm_init(vocab_size: int, embed_dim: int, hidden_dim: int,
            rng: np.random.Generator, out_dim: int | None = None,
            dtype=np.float64) -> LanguageModel:
    out_dim = embed_dim if out_dim is None else out_dim
    store = ParamStore(dtype=dtype)
    init_embedding(store, "lm.emb", vocab_size, embed_dim, rng, group="lm")
    init_gru(store, "lm.fw", embed_dim, hidden_dim, rng, group="lm")
    store.add("lm.h0", np.zeros((1, hidden_dim)), group="lm")
    store.add("lm.emb_out", rng.uniform(-0.1, 0.1, size=(vocab_size, out_dim)), group="lm")
    store.add("lm.M", glorot(rng, (hidden_dim, out_dim)), group="lm")
    uni = np.full(vocab_size, 1.0 / max(vocab_size - 1, 1))
    uni[0] = 0.0
    return LanguageModel(store, vocab_size, embed_dim, hidden_dim, out_dim, unigram=uni)


def unigram(corpus: list[list[int]], vocab_size: int) -> np.ndarray:
    """Relative token frequencies over a corpus; the pad id gets zero."""
    counts = np.zeros(vocab_size)
    for seq in corpus:
        for tok in seq:
            if not 0 < tok < vocab_size:
                raise ContractViolation(f"token id {tok} outside (0, {vocab_size})")
            counts[tok] += 1
    total = counts.sum()
    if total == 0:
        raise ContractViolation("cannot build a unigram table from an empty corpus")
    return counts / total


def sample_negatives(probs: np.ndarray, rng: np.random.Generator, size) -> np.ndarray:
    """Draw token ids from a unigram distribution."""
    return rng.choice(probs.shape[0], size=size, p=probs)


def _prefix_states(params, ids: np.ndarray, valid: np.ndarray) -> list[Tensor]:
    """Hidden state for every position: entry i encodes tokens < i.

    Entry 0 is the learned start state broadcast across the batch.
    """
    batch, n = ids.shape
    h0 = params["lm.h0"]
    start = ad.add(h0, Tensor(np.zeros((batch, h0.data.shape[1]), dtype=h0.data.dtype)))
    if n == 1:
        return [start]
    xs = embed_steps(params, "lm.emb", ids[:, : n - 1])
    after = gru_scan(params, "lm.fw", xs, valid[:, : n - 1], reverse=False)
    return [start] + after


def bilinear_scores(lm: LanguageModel, ids: np.ndarray,
                    valid: np.ndarray | None = None) -> np.ndarray:
    """Frozen-model scores s[b, i] = h_i^T M e(x_i), as a plain array."""
    ids = np.asarray(ids, dtype=np.int64)
    if valid is None:
        valid = valid_mask(ids)
    params = lm.store.detached()
    states = _prefix_states(params, ids, valid)
    h_cat = ad.concat(states, axis=0)  # time-major (n*B, H)
    targets = ids.T.reshape(-1)
    e_t = ad.embedding(params["lm.emb_out"], targets)
    proj = ad.matmul(h_cat, params["lm.M"])
    s = ad.tsum(ad.mul(proj, e_t), axis=1)
    return s.data.reshape(ids.shape[1], ids.shape[0]).T.copy()


def lm_prob(lm: LanguageModel, prefix: list[int], target: int, m: float) -> float:
    """p(m x | prefix) = sigmoid(m * s), clamped to [1e-7, 1 - 1e-7]."""
    if not 0 <= target < lm.vocab_size:
        raise ContractViolation(f"target id {target} outside [0, {lm.vocab_size})")
    seq = list(prefix) + [target]
    ids = np.asarray(seq, dtype=np.int64).reshape(1, -1)
    s = bilinear_scores(lm, ids)[0, -1]
    p = 1.0 / (1.0 + np.exp(-float(m) * s))
    return float(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def lm_regularizer(lm: LanguageModel, ids: np.ndarray, m: Tensor,
                   valid: np.ndarray | None = None,
                   scores: np.ndarray | None = None) -> Tensor:
    """Fluency cost of a mask; differentiable in the mask only.

    For (B, n) input the result is the mean over instances; a single
    (n,) mask gives the raw sum.  With m identically one this reduces to
    the model's negative log likelihood over positions 1..n-1.
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = m.data.ndim == 1
    if single:
        ids = ids.reshape(1, -1)
        m = ad.reshape(m, (1, m.data.shape[0]))
    if m.data.shape != ids.shape:
        raise ContractViolation(
            f"mask shape {m.data.shape} does not match tokens {ids.shape}"
        )
    if ids.shape[1] < 2:
        return Tensor(np.zeros(()))
    if valid is None:
        valid = valid_mask(ids)
    if scores is None:
        scores = bilinear_scores(lm, ids, valid)
    pair_ok = Tensor(valid[:, 1:] * valid[:, :-1])
    p = ad.sigmoid(ad.mul(m[:, 1:], Tensor(scores[:, 1:])))
    term = ad.mul(ad.mul(m[:, :-1], ad.log_prob(p)), pair_ok)
    total = ad.mul(ad.tsum(term), -1.0)
    if single:
        return total
    return ad.mul(total, 1.0 / ids.shape[0])


def _collate(seqs: list[list[int]]) -> np.ndarray:
    n = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), n), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def pretrain_loss(lm: LanguageModel, ids: np.ndarray, k_neg: int,
                  rng: np.random.Generator) -> Tensor:
    """Negative-sampling objective for one batch (mean over instances).

    Each observed position contributes -log sigmoid(s+) plus the mean of
    log sigmoid(s-) over ``k_neg`` unigram draws.
    """
    ids = np.asarray(ids, dtype=np.int64)
    batch, n = ids.shape
    valid = valid_mask(ids)
    params = lm.store.params
    states = _prefix_states(params, ids, valid)
    h_cat = ad.concat(states, axis=0)
    proj = ad.matmul(h_cat, params["lm.M"])  # (n*B, out_dim)
    v_flat = Tensor(valid.T.reshape(-1))

    targets = ids.T.reshape(-1)
    e_pos = ad.embedding(params["lm.emb_out"], targets)
    s_pos = ad.tsum(ad.mul(proj, e_pos), axis=1)
    # log sigmoid(s) = -softplus(-s)
    pos_ll = ad.mul(ad.softplus(ad.mul(s_pos, -1.0)), -1.0)

    neg_ids = sample_negatives(lm.unigram, rng, size=(k_neg, targets.shape[0]))
    neg_ll_sum = None
    for k in range(k_neg):
        e_neg = ad.embedding(params["lm.emb_out"], neg_ids[k])
        s_neg = ad.tsum(ad.mul(proj, e_neg), axis=1)
        ll = ad.mul(ad.softplus(ad.mul(s_neg, -1.0)), -1.0)
        neg_ll_sum = ll if neg_ll_sum is None else ad.add(neg_ll_sum, ll)
    neg_ll = ad.mul(neg_ll_sum, 1.0 / k_neg)

    per_pos = ad.mul(ad.add(pos_ll, ad.mul(neg_ll, -1.0)), -1.0)
    return ad.mul(ad.tsum(ad.mul(per_pos, v_flat)), 1.0 / batch)


def lm_pretrain(corpus: list[list[int]], vocab_size: int, embed_dim: int,
                hidden_dim: int, steps: int, rng: np.random.Generator,
                k_neg: int = 5, batch_size: int = 32, lr: float = 1e-3,
                out_dim: int | None = None, dtype=np.float64) -> LanguageModel:
    """Train a language model on raw token sequences and freeze it.

    ``steps`` counts minibatches; zero steps returns the untouched random
    initialization (already frozen).  Sequences shorter than one token
    are rejected.
    """
    if not corpus:
        raise ContractViolation("lm_pretrain needs a non-empty corpus")
    if any(len(s) == 0 for s in corpus):
        raise ContractViolation("lm_pretrain found an empty sequence")
    lm = lm_init(vocab_size, embed_dim, hidden_dim, rng, out_dim=out_dim, dtype=dtype)
    lm.unigram = unigram(corpus, vocab_size)
    state = AdamState(lr=lr)
    order: list[int] = []
    for step in range(steps):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(corpus)).tolist())
        take, order = order[:batch_size], order[batch_size:]
        ids = _collate([corpus[i] for i in take])
        lm.store.zero_grad()
        loss = pretrain_loss(lm, ids, k_neg, rng)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericFault(f"language model pretraining diverged at step {step}")
        ad.backward(loss)
        adam_step(lm.store.params, ad.collect_grads(lm.store.params), state)
        lm.loss_history.append(value)
    lm.frozen = True
    return lm


def save_lm(lm: LanguageModel, path: str | Path) -> None:
    meta = {
        "vocab_size": lm.vocab_size,
        "embed_dim": lm.embed_dim,
        "hidden_dim": lm.hidden_dim,
        "out_dim": lm.out_dim,
        "unigram": lm.unigram.tolist(),
    }
    save_checkpoint(lm.store, path, tag=LM_TAG, meta=meta)


def load_lm(path: str | Path, dtype=np.float64) -> LanguageModel:
    values, manifest = load_checkpoint(path, expect_tag=LM_TAG)
    meta = manifest["meta"]
    try:
        lm = lm_init(
            meta["vocab_size"], meta["embed_dim"], meta["hidden_dim"],
            np.random.default_rng(0), out_dim=meta["out_dim"], dtype=dtype,
        )
        lm.unigram = np.asarray(meta["unigram"], dtype=float)
    except KeyError as e:
        raise DataError(f"language model checkpoint is missing metadata field {e}") from e
    lm.store.load_values(values)
    lm.frozen = True
    return lm
