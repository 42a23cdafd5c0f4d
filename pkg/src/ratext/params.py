"""Named parameter storage with group bookkeeping.

Parameters live in insertion order, which makes checkpoint layout and
training determinism reproducible run to run.  Groups partition the names
so the trainer can update the selector-predictor side, the guider, and
the discriminator independently.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation


class ParamStore:
    """An ordered name -> Tensor mapping with named parameter groups."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, list[str]] = {}

    def add(self, name: str, value: np.ndarray, group: str) -> Tensor:
        if name in self.params:
            raise ContractViolation(f"duplicate parameter name: {name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self.groups.setdefault(group, []).append(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def group(self, *group_names: str) -> dict[str, Tensor]:
        """The name -> Tensor sub-mapping for one or more groups."""
        out: dict[str, Tensor] = {}
        for g in group_names:
            if g not in self.groups:
                raise ContractViolation(f"unknown parameter group: {g!r}")
            for name in self.groups[g]:
                out[name] = self.params[name]
        return out

    def group_of(self, name: str) -> str:
        for g, names in self.groups.items():
            if name in names:
                return g
        raise ContractViolation(f"parameter {name!r} belongs to no group")

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def snapshot(self, group_names: tuple[str, ...] | None = None) -> dict[str, np.ndarray]:
        """Deep copies of current values, for rollback or isolation checks."""
        names = (
            self.names()
            if group_names is None
            else [n for g in group_names for n in self.groups[g]]
        )
        return {n: self.params[n].data.copy() for n in names}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self.params:
                raise ContractViolation(f"unknown parameter in load: {name!r}")
            p = self.params[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ContractViolation(
                    f"shape mismatch loading {name!r}: "
                    f"stored {arr.shape}, expected {p.data.shape}"
                )
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def detached(self) -> dict[str, Tensor]:
        """Constant views of every parameter (no gradient tracking).

        Running a forward pass through these builds no graph, which is how
        the trainer recomputes features for the discriminator step.
        """
        return {n: p.detach() for n, p in self.params.items()}


# ---------------------------------------------------------------------------
# initializers


def glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def embed_init(rng: np.random.Generator, vocab: int, dim: int, scale: float = 0.1) -> np.ndarray:
    w = rng.uniform(-scale, scale, size=(vocab, dim))
    w[0, :] = 0.0  # reserved pad row starts (and stays) at zero
    return w
