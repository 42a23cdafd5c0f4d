"""Adversarial information calibration between the two feature paths.

A small discriminator scores dense features: guider features are its
"real" side, selector-predictor features the "fake" side.  Its loss is

    L_d = -log D(z_real) + log D(z_fake)

which it minimizes over its own weights only (both features arrive
detached).  The generator side minimizes L_g = -log D(z_fake) with the
discriminator frozen, pushing the rationale feature toward territory the
discriminator credits as real.  A conventional two-term variant
-log D(z_real) - log(1 - D(z_fake)) is available behind ``variant``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .params import ParamStore, glorot

D_EPS = 1e-7
VARIANTS = ("difference", "standard")


def init_discriminator(store: ParamStore, feature_dim: int, rng: np.random.Generator,
                       hidden_dim: int | None = None, group: str = "discriminator") -> None:
    h = feature_dim if hidden_dim is None else hidden_dim
    store.add("disc.W1", glorot(rng, (feature_dim, h)), group)
    store.add("disc.b1", np.zeros(h), group)
    store.add("disc.w2", glorot(rng, (h, 1)), group)
    store.add("disc.b2", np.zeros(1), group)


def discriminate(params, z: Tensor) -> Tensor:
    """Probability-that-real for each feature row, clamped away from 0/1."""
    if z.data.ndim == 1:
        z = ad.reshape(z, (1, z.data.shape[0]))
    if z.data.shape[1] != params["disc.W1"].data.shape[0]:
        raise ContractViolation(
            f"feature dim {z.data.shape[1]} does not match discriminator "
            f"input dim {params['disc.W1'].data.shape[0]}"
        )
    h = ad.tanh(ad.add(ad.matmul(z, params["disc.W1"]), params["disc.b1"]))
    out = ad.sigmoid(ad.add(ad.matmul(h, params["disc.w2"]), params["disc.b2"]))
    return ad.clamp(out, D_EPS, 1.0 - D_EPS)


def d_loss(params, z_real: Tensor, z_fake: Tensor, variant: str = "difference") -> Tensor:
    """Discriminator objective on detached features (mean over the batch).

    Gradients reach only discriminator weights: both inputs are detached
    here regardless of what the caller passes.
    """
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown discriminator loss variant {variant!r}")
    d_real = discriminate(params, z_real.detach())
    d_fake = discriminate(params, z_fake.detach())
    if variant == "difference":
        per = ad.add(ad.mul(ad.log(d_real), -1.0), ad.log(d_fake))
    else:
        one_minus_fake = ad.clamp(ad.add(ad.mul(d_fake, -1.0), 1.0), D_EPS, 1.0 - D_EPS)
        per = ad.add(ad.mul(ad.log(d_real), -1.0), ad.mul(ad.log(one_minus_fake), -1.0))
    return ad.tmean(per)


def g_loss(params, z_fake: Tensor) -> Tensor:
    """Generator-side calibration term, -log D(z_fake), batch mean.

    The discriminator weights stay live in the graph; the trainer simply
    never applies their gradients during a generator step.
    """
    d_fake = discriminate(params, z_fake)
    return ad.tmean(ad.mul(ad.log(d_fake), -1.0))
