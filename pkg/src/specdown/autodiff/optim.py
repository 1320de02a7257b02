"""Named parameter registry and Adam with bias correction."""
from __future__ import annotations

import numpy as np

from .engine import Tensor


class MissingGradientError(RuntimeError):
    """A registered parameter reached an update step without a gradient."""


class ParamStore:
    """Flat name -> Tensor registry plus per-parameter Adam state.

    Buffers are named non-trainable arrays (running statistics) that
    serialize with the parameters but are never touched by the
    optimizer.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.asarray(value, dtype=np.float64))
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        self._t[name] = 0
        return tensor

    def buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self._buffers

    def n_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def adam_state(self, name: str) -> tuple[np.ndarray, np.ndarray, int]:
        return self._m[name], self._v[name], self._t[name]

    def load_param(self, name: str, value: np.ndarray) -> None:
        p = self._params[name]
        if p.data.shape != value.shape:
            raise ValueError(
                f"parameter {name!r} has shape {p.data.shape}, "
                f"checkpoint holds {value.shape}"
            )
        p.data = np.asarray(value, dtype=np.float64).copy()

    def load_adam_state(self, name: str, m: np.ndarray, v: np.ndarray,
                        t: int) -> None:
        self._m[name] = np.asarray(m, dtype=np.float64).copy()
        self._v[name] = np.asarray(v, dtype=np.float64).copy()
        self._t[name] = int(t)

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        buf = self._buffers[name]
        if buf.shape != value.shape:
            raise ValueError(
                f"buffer {name!r} has shape {buf.shape}, "
                f"checkpoint holds {value.shape}"
            )
        buf[...] = value  # in place: layers hold references to this array


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update over every registered parameter.

    Raises MissingGradientError (naming the parameter) if any gradient
    is absent, so silently detached subgraphs cannot train partially.
    """
    for name, p in store.items():
        if p.grad is None:
            raise MissingGradientError(f"no gradient for parameter {name!r}")
        g = p.grad
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
