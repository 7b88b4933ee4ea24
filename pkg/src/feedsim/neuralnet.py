"""Minimal neural-network substrate with reverse-mode gradients.

Everything is 64-bit float and 2-D: activations are [batch, features],
weights [out, in], biases and norm parameters [1, n], scalar losses [1, 1].
A Tensor records the op that produced it; backward() walks the graph once
in reverse topological order. Any NaN or Inf in a value or a finished
gradient raises NumericFault instead of propagating.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


class NumericFault(ArithmeticError):
    """A non-finite value appeared in an activation, gradient, or parameter."""


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericFault(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(
        self,
        value,
        parents: tuple = (),
        backward: Optional[Callable[[], None]] = None,
    ):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        _check_finite(arr, "tensor value")
        self.value = arr
        self.grad = np.zeros_like(arr)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar (1x1) tensor")
        topo: list[Tensor] = []
        visited = {id(self)}
        stack: list[tuple[Tensor, any]] = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for parent in parents:
                if id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    pushed = True
                    break
            if not pushed:
                topo.append(node)
                stack.pop()
        self.grad = self.grad + 1.0
        for node in reversed(topo):
            # A node's grad is final once popped here (all consumers done).
            _check_finite(node.grad, "gradient")
            if node._backward is not None:
                node._backward()


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64, copy=True))


# -- ops ----------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = Tensor(x.value @ w.value.T + b.value, parents=(x, w, b))

    def backward() -> None:
        g = out.grad
        x.grad += g @ w.value
        w.grad += g.T @ x.value
        b.grad += g.sum(axis=0, keepdims=True)

    out._backward = backward
    return out


def affine2(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Fused x @ wx.T + h @ wh.T + b (one node per recurrent step)."""
    out = Tensor(x.value @ wx.value.T + h.value @ wh.value.T + b.value, parents=(x, h, wx, wh, b))

    def backward() -> None:
        g = out.grad
        x.grad += g @ wx.value
        h.grad += g @ wh.value
        wx.grad += g.T @ x.value
        wh.grad += g.T @ h.value
        b.grad += g.sum(axis=0, keepdims=True)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.value + b.value, parents=(a, b))

    def backward() -> None:
        a.grad += out.grad
        b.grad += out.grad

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.value * b.value, parents=(a, b))

    def backward() -> None:
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = backward
    return out


def scale(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.value * k, parents=(x,))

    def backward() -> None:
        x.grad += out.grad * k

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    out = Tensor(y, parents=(x,))

    def backward() -> None:
        x.grad += out.grad * (1.0 - y * y)

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    y = np.empty_like(v)
    pos = v >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    y[~pos] = ev / (1.0 + ev)
    out = Tensor(y, parents=(x,))

    def backward() -> None:
        x.grad += out.grad * y * (1.0 - y)

    out._backward = backward
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat row mismatch {a.shape} vs {b.shape}")
    split = a.shape[1]
    out = Tensor(np.concatenate([a.value, b.value], axis=1), parents=(a, b))

    def backward() -> None:
        a.grad += out.grad[:, :split]
        b.grad += out.grad[:, split:]

    out._backward = backward
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.value[:, start:stop], parents=(x,))

    def backward() -> None:
        x.grad[:, start:stop] += out.grad

    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Rowwise normalization with population variance, then affine."""
    v = x.value
    n = v.shape[1]
    mu = v.mean(axis=1, keepdims=True)
    var = v.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = Tensor(xhat * gain.value + bias.value, parents=(x, gain, bias))

    def backward() -> None:
        g = out.grad
        gain.grad += (g * xhat).sum(axis=0, keepdims=True)
        bias.grad += g.sum(axis=0, keepdims=True)
        dxhat = g * gain.value
        x.grad += (
            inv
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
            )
        )

    out._backward = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([[x.value.mean()]]), parents=(x,))
    size = x.value.size

    def backward() -> None:
        x.grad += out.grad[0, 0] / size

    out._backward = backward
    return out


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"mse shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.value - t
    out = Tensor(np.array([[np.mean(diff * diff)]]), parents=(pred,))
    size = diff.size

    def backward() -> None:
        pred.grad += (2.0 / size) * diff * out.grad[0, 0]

    out._backward = backward
    return out


# -- layers ---------------------------------------------------------------


def _uniform_init(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = parameter(_uniform_init(rng, (out_dim, in_dim), in_dim))
        self.b = parameter(np.zeros((1, out_dim)))

    def forward(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("w", self.w), ("b", self.b)]


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones((1, dim)))
        self.bias = parameter(np.zeros((1, dim)))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("gain", self.gain), ("bias", self.bias)]


class LSTMCell:
    """Standard LSTM with gate order input, forget, candidate, output."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        h4 = 4 * hidden_size
        self.wx = parameter(_uniform_init(rng, (h4, input_size), input_size))
        self.wh = parameter(_uniform_init(rng, (h4, hidden_size), hidden_size))
        self.b = parameter(np.zeros((1, h4)))

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hs = self.hidden_size
        pre = affine2(x, h, self.wx, self.wh, self.b)
        i = sigmoid(slice_cols(pre, 0, hs))
        f = sigmoid(slice_cols(pre, hs, 2 * hs))
        g = tanh(slice_cols(pre, 2 * hs, 3 * hs))
        o = sigmoid(slice_cols(pre, 3 * hs, 4 * hs))
        c_next = add(mul(f, c), mul(i, g))
        h_next = mul(o, tanh(c_next))
        return h_next, c_next

    def forward(self, x_seq: list[Tensor], h0: Tensor, c0: Tensor) -> tuple[list[Tensor], Tensor, Tensor]:
        h, c = h0, c0
        h_seq = []
        for x in x_seq:
            h, c = self.step(x, h, c)
            h_seq.append(h)
        return h_seq, h, c

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("wx", self.wx), ("wh", self.wh), ("b", self.b)]


class Adam:
    def __init__(
        self,
        params: list[Tensor],
        lr: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in params]
        self._v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            _check_finite(p.value, "parameter after optimizer step")


# -- checkpoints -----------------------------------------------------------

_CKPT_MAGIC = b"FSCKPT1\n"


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Named tensors, sorted by name: ascii "name d0,d1" header line per
    tensor, then row-major little-endian float64 payload."""
    with open(path, "wb") as handle:
        handle.write(_CKPT_MAGIC)
        for name in sorted(tensors):
            if " " in name or "\n" in name:
                raise ValueError(f"invalid tensor name {name!r}")
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            dims = ",".join(str(d) for d in arr.shape)
            handle.write(f"{name} {dims}\n".encode("ascii"))
            handle.write(arr.tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if not blob.startswith(_CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(_CKPT_MAGIC)
    out: dict[str, np.ndarray] = {}
    while pos < len(blob):
        end = blob.index(b"\n", pos)
        header = blob[pos:end].decode("ascii")
        pos = end + 1
        name, dims = header.split(" ")
        shape = tuple(int(d) for d in dims.split(","))
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(blob[pos : pos + nbytes], dtype="<f8").reshape(shape)
        pos += nbytes
        out[name] = arr.astype(np.float64)
    return out
