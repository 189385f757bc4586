"""A small reverse-mode autodiff engine over numpy arrays, plus MLPs and Adam.

Every value is float64. Graph recording is on by default and can be
suspended with :func:`no_grad` for rollouts.
"""
from __future__ import annotations

import contextlib
import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    @staticmethod
    def _make(data, parents, backward):
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, parents, backward, requires_grad=True)
        return Tensor(data)

    def _accumulate(self, g):
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))
        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))
        return Tensor._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / other.data ** 2, other.shape))
        return Tensor._make(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, k):
        if isinstance(k, Tensor):
            raise TypeError("tensor exponents are not supported")

        def backward(g):
            self._accumulate(g * k * self.data ** (k - 1))
        return Tensor._make(self.data ** k, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.shape[-1] != other.shape[0]:
            raise ValueError(f"shape mismatch for matmul: {self.shape} @ {other.shape}")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                a = self.data.reshape(-1, self.shape[-1])
                other._accumulate(a.T @ g.reshape(-1, g.shape[-1]))
        return Tensor._make(self.data @ other.data, (self, other), backward)

    # elementwise ------------------------------------------------------
    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: self._accumulate(g * (1.0 - out * out)))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: self._accumulate(g * out))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), lambda g: self._accumulate(g / self.data))

    def abs(self):
        return Tensor._make(np.abs(self.data), (self,), lambda g: self._accumulate(g * np.sign(self.data)))

    def clip(self, lo, hi):
        mask = (self.data >= lo) & (self.data <= hi)
        return Tensor._make(np.clip(self.data, lo, hi), (self,), lambda g: self._accumulate(g * mask))

    # reductions and shape ---------------------------------------------
    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())
        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return Tensor._make(self.data.reshape(*shape), (self,),
                            lambda g: self._accumulate(g.reshape(self.shape)))

    def __getitem__(self, idx):
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)
        return Tensor._make(self.data[idx], (self,), backward)

    def log_softmax(self, axis=-1):
        m = self.data.max(axis=axis, keepdims=True)
        shifted = self.data - m
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

        def backward(g):
            soft = np.exp(out)
            self._accumulate(g - soft * g.sum(axis=axis, keepdims=True))
        return Tensor._make(out, (self,), backward)

    def take_last(self, index):
        """Pick ``self[..., index[...]]`` along the last axis."""
        index = np.asarray(index)[..., None]

        def backward(g):
            full = np.zeros_like(self.data)
            np.put_along_axis(full, index, g[..., None], axis=-1)
            self._accumulate(full)
        return Tensor._make(np.take_along_axis(self.data, index, axis=-1)[..., 0], (self,), backward)

    # autodiff ----------------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accumulate(part)
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * pick_a, a.shape))
        b._accumulate(_unbroadcast(g * ~pick_a, b.shape))
    return Tensor._make(np.minimum(a.data, b.data), (a, b), backward)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * pick_a, a.shape))
        b._accumulate(_unbroadcast(g * ~pick_a, b.shape))
    return Tensor._make(np.maximum(a.data, b.data), (a, b), backward)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Mlp:
    """Fully connected net: tanh hidden layers, linear output."""

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights, self.biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if i == len(self.sizes) - 2:
                bound *= out_scale
            self.weights.append(parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
            self.biases.append(parameter(rng.uniform(-bound, bound, size=fan_out)))

    def __call__(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = x.tanh()
        return x

    def parameters(self, prefix=""):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def adam_step(param, grad, m, v, t, lr, betas=(0.9, 0.999), eps_num=1e-8):
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps_num), m, v


class Adam:
    def __init__(self, params: dict, lr=1e-4, betas=(0.9, 0.999), eps_num=1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps_num = eps_num
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            p.data, self.m[k], self.v[k] = adam_step(p.data, g, self.m[k], self.v[k], self.t,
                                                    self.lr, self.betas, self.eps_num)


def clip_grad_norm(params: dict, max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    """Write named float arrays and JSON metadata to a ``.npz`` file."""
    header = {"format": "crosspriv-checkpoint", "version": CHECKPOINT_VERSION, "meta": meta or {}}
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Return ``(arrays, meta)`` written by :func:`save_checkpoint`."""
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format") != "crosspriv-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {k: z[k].copy() for k in z.files if k != "__header__"}
    return arrays, header["meta"]
