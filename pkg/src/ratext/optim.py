"""Adam updates over named parameter groups, plus a finite-difference
gradient audit used by the tests and the ``gradcheck`` CLI command.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, backward, collect_grads
from .errors import ContractViolation

Array = np.ndarray


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name.

    ``step_count`` increments once per :func:`adam_step` call and drives
    bias correction, so updates are a pure function of (state, grads).
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Array], state: AdamState) -> None:
    """Apply one Adam update in place to every parameter in ``params``.

    Parameters missing from ``grads`` are treated as having zero gradient
    (their moments decay but the very first step leaves them untouched
    when the moments start at zero).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ContractViolation(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}"
            )
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference audit


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    fd_step: float
    max_rel_err: float
    worst_param: str
    worst_index: int
    per_param: dict[str, float]

    def summary(self) -> str:
        status = "ok" if self.passed else "FAILED"
        return (
            f"gradient audit {status}: max rel err {self.max_rel_err:.3e} "
            f"at {self.worst_param}[{self.worst_index}] (tolerance {self.tolerance:.1e})"
        )


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    fd_step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn`` against central
    finite differences over every scalar entry of ``params``.

    ``loss_fn`` must be deterministic: any sampling inside it has to draw
    from a freshly reseeded generator so repeated calls see identical
    noise.  Relative error uses max(1, |a|, |b|) in the denominator.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = collect_grads(dict(params))

    max_err = -1.0
    worst = ("", 0)
    per_param: dict[str, float] = {}
    for name, p in params.items():
        a = analytic[name].reshape(-1)
        flat = p.data.reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            f_plus = float(loss_fn().data.reshape(()))
            flat[i] = orig - fd_step
            f_minus = float(loss_fn().data.reshape(()))
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * fd_step)
            denom = max(1.0, abs(a[i]), abs(fd))
            err = abs(a[i] - fd) / denom
            if err > worst_here:
                worst_here = err
            if err > max_err:
                max_err = err
                worst = (name, i)
        per_param[name] = worst_here
    return GradCheckReport(
        passed=max_err < tolerance,
        tolerance=tolerance,
        fd_step=fd_step,
        max_rel_err=max_err,
        worst_param=worst[0],
        worst_index=worst[1],
        per_param=per_param,
    )
