"""The guider reads the whole input and compresses it through a Gaussian
information bottleneck.

From the pooled encoding h of the unmasked sequence, two linear heads
produce a posterior N(mu, diag(sigma^2)); the reparameterized sample
z = u * sigma + mu feeds the same prediction head the predictor uses.
Keeping that head shared is what makes the guider's feature space
comparable with the predictor's, which the discriminator relies on.

mi_loss is the closed-form KL from N(mu, diag(sigma^2)) to N(0, I),
summed over coordinates:

    0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma)
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
from .predictor import apply_head, prediction_loss

SIGMA_FLOOR = 1e-4


@dataclass
class GuiderSample:
    """One reparameterized draw from the guider's posterior."""

    mu: Tensor
    sigma: Tensor
    u: np.ndarray
    z: Tensor


def init_guider(store: ParamStore, vocab_size: int, embed_dim: int, hidden_dim: int,
                rng: np.random.Generator, group: str = "guider") -> None:
    init_encoder(store, "guider", vocab_size, embed_dim, hidden_dim, rng, group)
    d = 2 * hidden_dim
    store.add("guider.W_m", glorot(rng, (d, d)), group)
    store.add("guider.b_m", np.zeros(d), group)
    store.add("guider.W_s", glorot(rng, (d, d)), group)
    store.add("guider.b_s", np.zeros(d), group)


def guider_forward_batch(params, ids: np.ndarray, mode: str,
                         rng: np.random.Generator | None = None,
                         u: np.ndarray | None = None,
                         valid: np.ndarray | None = None) -> tuple[GuiderSample, Tensor]:
    """Encode the full input and sample the bottleneck feature.

    Pass either ``rng`` or a fixed standard-normal draw ``u`` of shape
    (B, 2H).  sigma = softplus(W_s h + b_s) + 1e-4, so it is strictly
    positive and the log in mi_loss is always defined.
    """
    _, pooled, _ = encode_ids(params, "guider", ids, valid)
    mu = ad.add(ad.matmul(pooled, params["guider.W_m"]), params["guider.b_m"])
    sigma = ad.add(
        ad.softplus(ad.add(ad.matmul(pooled, params["guider.W_s"]), params["guider.b_s"])),
        SIGMA_FLOOR,
    )
    if u is None:
        if rng is None:
            raise ContractViolation("guider_forward needs an rng or an explicit draw")
        u = rng.standard_normal(mu.data.shape)
    u = np.asarray(u, dtype=float)
    if u.shape != mu.data.shape:
        raise ContractViolation(f"noise shape {u.shape} does not match mu {mu.data.shape}")
    z = ad.add(ad.mul(sigma, Tensor(u)), mu)
    y_hat = apply_head(params, z, mode)
    return GuiderSample(mu=mu, sigma=sigma, u=u, z=z), y_hat


def guider_forward(params, tokens: Sequence[int], mode: str,
                   rng: np.random.Generator | None = None,
                   u: np.ndarray | None = None) -> tuple[GuiderSample, Tensor]:
    """Single-sequence surface around the batched forward pass."""
    ids = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    if u is not None:
        u = np.asarray(u, dtype=float).reshape(1, -1)
    sample, y_hat = guider_forward_batch(params, ids, mode, rng=rng, u=u)
    squeezed = GuiderSample(
        mu=sample.mu[0], sigma=sample.sigma[0], u=sample.u[0], z=sample.z[0]
    )
    return squeezed, (y_hat[0] if mode == "classification" else y_hat[0, 0])


def guide_loss(y_hat: Tensor, labels, mode: str) -> Tensor:
    """Task loss of the guider path (same form as the predictor's)."""
    return prediction_loss(y_hat, labels, mode)


def mi_loss(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, diag(sigma^2)) || N(0, I)), mean over a batch if 2-D."""
    total = ad.mul(
        ad.tsum(
            ad.add(
                ad.add(ad.add(ad.mul(mu, mu), ad.mul(sigma, sigma)), -1.0),
                ad.mul(ad.log(sigma), -2.0),
            )
        ),
        0.5,
    )
    if mu.data.ndim == 2:
        return ad.mul(total, 1.0 / mu.data.shape[0])
    return total
