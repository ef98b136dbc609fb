"""Named-parameter store and weight initializers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import DEFAULT_DTYPE, Parameter


class ParamStore:
    """Flat mapping of unique path-like names to Parameters.

    Prefixes ("encoder.", "decoder.", ...) group parameters for checkpoint
    transfer and weight-initialization policies.
    """

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = dtype
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        p = Parameter(name, data, dtype=self.dtype)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def with_prefix(self, prefix: str) -> list[Parameter]:
        return [p for name, p in self._params.items() if name.startswith(prefix)]

    def count_values(self, prefix: str = "") -> int:
        return sum(p.value.size for name, p in self._params.items() if name.startswith(prefix))

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True):
        for name, p in self._params.items():
            if name in arrays:
                src = arrays[name]
                if src.shape != p.value.shape:
                    raise ValueError(f"parameter {name!r}: checkpoint shape {src.shape} != model shape {p.value.shape}")
                p.value = src
            elif strict:
                raise KeyError(f"parameter {name!r} missing from state arrays")


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) with resampling outside +/- bound*std."""
    out = rng.normal(0.0, std, size=shape)
    limit = bound * std
    bad = np.abs(out) > limit
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > limit
    return out


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Glorot uniform for a (fan_in, fan_out) weight matrix."""
    if len(shape) != 2:
        raise ValueError(f"xavier_uniform expects a 2-d shape, got {shape}")
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)
