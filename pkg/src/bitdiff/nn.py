"""Parameter containers, basic layers and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor, conv2d, group_norm


class Module:
    """Attribute-walking parameter container.

    Parameters are :class:`Tensor` attributes with ``requires_grad`` set at
    construction time, or tensors registered through :meth:`buffer` (stored
    in checkpoints but never optimized).  Iteration order is attribute
    insertion order, so parameter lists are deterministic.
    """

    def __init__(self):
        self._buffers: dict[str, Tensor] = {}

    def buffer(self, name: str, value: Tensor) -> Tensor:
        self._buffers[name] = value
        setattr(self, name, value)
        return value

    def named_tensors(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_tensors(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_tensors(f"{key}.{i}."))
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        out.update(item.named_tensors(f"{key}.{k}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{k}"] = item
        return out

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, v) for k, v in self.named_tensors().items() if v.requires_grad)

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.named_tensors().values():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_tensors().items())

    def load_state_dict(self, state: dict, strict: bool = True) -> list[str]:
        """Copy arrays into matching tensors; returns the names that were missing."""
        missing = []
        for name, t in self.named_tensors().items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(t.dtype).copy()
        if strict and missing:
            raise KeyError(f"missing tensors in state: {missing}")
        return missing


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int | None = None, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k * k
        self.weight = Tensor(_uniform(rng, (c_out, c_in, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int):
        super().__init__()
        self.weight = Tensor(_uniform(rng, (n_in, n_out), n_in), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8):
        super().__init__()
        self.groups = min(groups, channels)
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)


class Adam:
    """Adam with bias correction; state is exposed for checkpointing."""

    def __init__(self, named_params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = OrderedDict(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"optim.step": np.array([self.step_count], dtype=np.int64)}
        for k in self.params:
            state[f"optim.m.{k}"] = self.m[k]
            state[f"optim.v.{k}"] = self.v[k]
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(state["optim.step"]).ravel()[0])
        for k in self.params:
            self.m[k] = np.asarray(state[f"optim.m.{k}"], dtype=self.params[k].dtype).copy()
            self.v[k] = np.asarray(state[f"optim.v.{k}"], dtype=self.params[k].dtype).copy()
