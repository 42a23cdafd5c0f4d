"""Token embeddings and a bidirectional gated recurrent encoder.

The recurrent cell uses fused reset/update gates:

    r, z = split(sigmoid(x W_g + h U_g + b_g))
    c    = tanh(x W_c + (r * h) U_c + b_c)
    h'   = (1 - z) * h + z * c

Both directions have their own weights.  Padded positions (token id 0)
embed to the zero vector and freeze the hidden state, so batches padded
to a common length encode each sequence exactly as it would encode alone.

Everything here is written batch-first: token ids arrive as (B, n)
integer arrays and per-step activations are (B, dim) tensors.  The
single-sequence entry points wrap a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParamStore, embed_init, glorot


@dataclass
class EncoderOutput:
    """Per-token states (n, 2H) and the pooled feature (2H,).

    Pooling concatenates the final forward state with the final backward
    state (the backward pass read the sequence right to left, so its last
    state sits at position 0).
    """

    states: Tensor
    pooled: Tensor


def init_embedding(store: ParamStore, name: str, vocab_size: int, embed_dim: int,
                   rng: np.random.Generator, group: str) -> None:
    store.add(name, embed_init(rng, vocab_size, embed_dim), group)


def init_gru(store: ParamStore, prefix: str, in_dim: int, hidden_dim: int,
             rng: np.random.Generator, group: str) -> None:
    store.add(f"{prefix}.Wg", glorot(rng, (in_dim, 2 * hidden_dim)), group)
    store.add(f"{prefix}.Ug", glorot(rng, (hidden_dim, 2 * hidden_dim)), group)
    store.add(f"{prefix}.bg", np.zeros(2 * hidden_dim), group)
    store.add(f"{prefix}.Wc", glorot(rng, (in_dim, hidden_dim)), group)
    store.add(f"{prefix}.Uc", glorot(rng, (hidden_dim, hidden_dim)), group)
    store.add(f"{prefix}.bc", np.zeros(hidden_dim), group)


def init_encoder(store: ParamStore, prefix: str, vocab_size: int, embed_dim: int,
                 hidden_dim: int, rng: np.random.Generator, group: str) -> None:
    """Embedding table plus forward and backward recurrent weights."""
    init_embedding(store, f"{prefix}.emb", vocab_size, embed_dim, rng, group)
    init_gru(store, f"{prefix}.fw", embed_dim, hidden_dim, rng, group)
    init_gru(store, f"{prefix}.bw", embed_dim, hidden_dim, rng, group)


def valid_mask(ids: np.ndarray) -> np.ndarray:
    """1.0 where a real token sits, 0.0 at padding (token id 0)."""
    return (np.asarray(ids) != 0).astype(float)


def embed_steps(params, table_name: str, ids: np.ndarray) -> list[Tensor]:
    """Per-timestep embedding lookups for a (B, n) id array.

    Pad positions come out as exact zero rows whatever the table holds,
    and contribute no gradient to any row of the table.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ContractViolation(f"expected (B, n) token ids, got shape {ids.shape}")
    table = params[table_name]
    nonpad = (ids != 0).astype(table.data.dtype)
    steps = []
    for t in range(ids.shape[1]):
        e = ad.embedding(table, ids[:, t])
        steps.append(ad.mul(e, Tensor(nonpad[:, t:t + 1])))
    return steps


def embed(params, table_name: str, tokens: Sequence[int]) -> Tensor:
    """Embedding matrix (n, embed_dim) for one token sequence."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    steps = embed_steps(params, table_name, ids)
    return ad.concat(steps, axis=0)


def gru_scan(params, prefix: str, xs: list[Tensor], valid: np.ndarray,
             reverse: bool = False) -> list[Tensor]:
    """Run the gated cell over per-step inputs, freezing state at pads.

    Returns the hidden state after each input position, in input order
    (for the reverse direction, entry t is the state after reading
    positions n-1 .. t).
    """
    Wg, Ug, bg = params[f"{prefix}.Wg"], params[f"{prefix}.Ug"], params[f"{prefix}.bg"]
    Wc, Uc, bc = params[f"{prefix}.Wc"], params[f"{prefix}.Uc"], params[f"{prefix}.bc"]
    hidden = Wc.data.shape[1]
    n = len(xs)
    batch = xs[0].data.shape[0]
    order = range(n - 1, -1, -1) if reverse else range(n)

    h = Tensor(np.zeros((batch, hidden), dtype=Wc.data.dtype))
    out: list[Tensor | None] = [None] * n
    for t in order:
        x = xs[t]
        gates = ad.sigmoid(ad.add(ad.add(ad.matmul(x, Wg), ad.matmul(h, Ug)), bg))
        r = gates[:, :hidden]
        z = gates[:, hidden:]
        c = ad.tanh(ad.add(ad.add(ad.matmul(x, Wc), ad.matmul(ad.mul(r, h), Uc)), bc))
        h_new = ad.add(h, ad.mul(z, ad.add(c, ad.mul(h, -1.0))))
        v = Tensor(valid[:, t:t + 1].astype(Wc.data.dtype))
        # pads keep the previous state bit-for-bit
        h = ad.add(h, ad.mul(v, ad.add(h_new, ad.mul(h, -1.0))))
        out[t] = h
    return out  # type: ignore[return-value]


def encode_steps(params, prefix: str, xs: list[Tensor], valid: np.ndarray):
    """Bidirectional encoding of embedded steps.

    Returns (states, pooled): ``states`` is a length-n list of (B, 2H)
    tensors and ``pooled`` is (B, 2H), the concatenation of the last
    forward state with the last backward state.
    """
    if not xs:
        raise ContractViolation("cannot encode an empty sequence")
    fw = gru_scan(params, f"{prefix}.fw", xs, valid, reverse=False)
    bw = gru_scan(params, f"{prefix}.bw", xs, valid, reverse=True)
    states = [ad.concat([f, b], axis=1) for f, b in zip(fw, bw)]
    pooled = ad.concat([fw[-1], bw[0]], axis=1)
    return states, pooled


def encode_ids(params, prefix: str, ids: np.ndarray, valid: np.ndarray | None = None):
    """Embed then encode a (B, n) id array; returns (states, pooled, valid)."""
    ids = np.asarray(ids, dtype=np.int64)
    if valid is None:
        valid = valid_mask(ids)
    xs = embed_steps(params, f"{prefix}.emb", ids)
    states, pooled = encode_steps(params, prefix, xs, valid)
    return states, pooled, valid


def encode(params, prefix: str, embeddings: Tensor, valid: np.ndarray | None = None) -> EncoderOutput:
    """Single-sequence surface over (n, embed_dim) embeddings."""
    n = embeddings.data.shape[0]
    if n < 1:
        raise ContractViolation("cannot encode an empty sequence")
    if valid is None:
        valid = np.ones((1, n))
    else:
        valid = np.asarray(valid, dtype=float).reshape(1, n)
    xs = [embeddings[t:t + 1, :] for t in range(n)]
    states, pooled = encode_steps(params, prefix, xs, valid)
    return EncoderOutput(states=ad.concat(states, axis=0), pooled=pooled[0])
