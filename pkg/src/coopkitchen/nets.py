"""Neural networks with explicit forward/backward passes in numpy.

All parameters of a network live in one flat float64 vector (ParamStore), so
the optimizer, file format, population copies, and finite-difference checks
each operate on a single array. Layers register their initial values during
construction and afterwards read/write through named views into that vector.

Two architectures are provided: a small fully-connected softmax policy over
the 64-dim handcrafted features, and a conv-trunk policy/value network over
the 20-plane lossless grid encoding. Both are float64 throughout; gradients
accumulate, so callers zero them between batches.
"""

from __future__ import annotations

import json
from typing import Callable, Optional, Sequence

import numpy as np


class ParamStore:
    """Flat parameter vector with named, shaped views and a twin gradient."""

    def __init__(self):
        self._inits: list[tuple[str, np.ndarray]] = []
        self._slices: dict[str, tuple[int, int]] = {}
        self._shapes: dict[str, tuple[int, ...]] = {}
        self.flat: np.ndarray = np.zeros(0)
        self.grad: np.ndarray = np.zeros(0)
        self._finalized = False

    def add(self, name: str, array: np.ndarray) -> None:
        if self._finalized:
            raise RuntimeError("parameter store already finalized")
        if any(existing == name for existing, _ in self._inits):
            raise ValueError(f"duplicate parameter {name!r}")
        self._inits.append((name, np.asarray(array, dtype=np.float64)))

    def finalize(self) -> None:
        offset = 0
        chunks = []
        for name, array in self._inits:
            self._shapes[name] = array.shape
            self._slices[name] = (offset, offset + array.size)
            chunks.append(array.ravel())
            offset += array.size
        self.flat = np.concatenate(chunks) if chunks else np.zeros(0)
        self.grad = np.zeros_like(self.flat)
        self._inits = []
        self._finalized = True

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def names(self) -> list[str]:
        return list(self._shapes)

    def view(self, name: str) -> np.ndarray:
        lo, hi = self._slices[name]
        return self.flat[lo:hi].reshape(self._shapes[name])

    def grad_view(self, name: str) -> np.ndarray:
        lo, hi = self._slices[name]
        return self.grad[lo:hi].reshape(self._shapes[name])

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale the gradient to ``max_norm`` if it exceeds it; returns the
        pre-clip norm."""
        norm = float(np.sqrt(np.dot(self.grad, self.grad)))
        if norm > max_norm > 0.0:
            self.grad *= max_norm / norm
        return norm

    def copy_flat(self) -> np.ndarray:
        return self.flat.copy()

    def load_flat(self, values: np.ndarray) -> None:
        if values.shape != self.flat.shape:
            raise ValueError(
                f"expected {self.flat.shape[0]} parameters, got {values.shape}")
        self.flat[:] = values


# -- layers ----------------------------------------------------------------


class Dense:
    """Affine layer; weights fan-in scaled uniform, biases zero."""

    def __init__(self, store: ParamStore, name: str, in_dim: int,
                 out_dim: int, rng: np.random.Generator, scale: float = 1.0):
        limit = np.sqrt(1.0 / in_dim)
        store.add(f"{name}.W",
                  rng.uniform(-limit, limit, (in_dim, out_dim)) * scale)
        store.add(f"{name}.b", np.zeros(out_dim))
        self.store = store
        self.name = name
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.store.view(f"{self.name}.W") + self.store.view(
            f"{self.name}.b")

    def backward(self, dout: np.ndarray) -> np.ndarray:
        assert self._x is not None, "backward before forward"
        self.store.grad_view(f"{self.name}.W")[...] += self._x.T @ dout
        self.store.grad_view(f"{self.name}.b")[...] += dout.sum(axis=0)
        return dout @ self.store.view(f"{self.name}.W").T


class ReLU:
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        # np.maximum propagates NaN, so bad inputs surface in the loss
        return np.maximum(x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        assert self._mask is not None, "backward before forward"
        return np.where(self._mask, dout, 0.0)


class Conv2D:
    """Stride-1 zero-padded convolution that preserves the grid size.

    Forward lowers each window to a row (im2col) and runs one matmul;
    backward scatters the column gradient back with a small loop over the
    kernel offsets.
    """

    def __init__(self, store: ParamStore, name: str, in_channels: int,
                 filters: int, kernel: int, rng: np.random.Generator):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd to preserve the grid")
        fan_in = in_channels * kernel * kernel
        limit = np.sqrt(1.0 / fan_in)
        store.add(f"{name}.W", rng.uniform(
            -limit, limit, (filters, in_channels, kernel, kernel)))
        store.add(f"{name}.b", np.zeros(filters))
        self.store = store
        self.name = name
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.pad = kernel // 2
        self._cols: Optional[np.ndarray] = None
        self._in_shape: Optional[tuple[int, ...]] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        k, p = self.kernel, self.pad
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(
            padded, (k, k), axis=(2, 3))
        # (n, c, h, w, k, k) -> rows of length c*k*k, one per output pixel
        cols = np.ascontiguousarray(
            windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * k * k)
        self._cols = cols
        self._in_shape = (n, c, h, w)
        weight = self.store.view(f"{self.name}.W").reshape(self.filters, -1)
        out = cols @ weight.T + self.store.view(f"{self.name}.b")
        return out.reshape(n, h, w, self.filters).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        assert self._cols is not None and self._in_shape is not None
        n, c, h, w = self._in_shape
        k, p, f = self.kernel, self.pad, self.filters
        dflat = np.ascontiguousarray(
            dout.transpose(0, 2, 3, 1)).reshape(n * h * w, f)
        grad_w = self.store.grad_view(f"{self.name}.W")
        grad_w += (dflat.T @ self._cols).reshape(grad_w.shape)
        self.store.grad_view(f"{self.name}.b")[...] += dflat.sum(axis=0)
        # input gradient: one matmul against the weight reordered to
        # (f, k*k*c) so each kernel-offset slab is already channels-last
        # and scatters into the padded buffer without a permute copy
        weight = self.store.view(f"{self.name}.W")
        weight_kkc = weight.transpose(0, 2, 3, 1).reshape(f, k * k * c)
        dcols = (dflat @ weight_kkc).reshape(n, h, w, k, k, c)
        dpadded = np.zeros((n, h + 2 * p, w + 2 * p, c))
        for i in range(k):
            for j in range(k):
                dpadded[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return np.ascontiguousarray(
            dpadded[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2))


class Flatten:
    def __init__(self):
        self._shape: Optional[tuple[int, ...]] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        assert self._shape is not None
        return dout.reshape(self._shape)


# -- probability helpers ----------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy over the batch and its gradient w.r.t. logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


# -- networks ----------------------------------------------------------------


class MLP:
    """Fully-connected softmax policy over flat feature vectors."""

    def __init__(self, in_dim: int, hidden: Sequence[int] = (64, 64),
                 out_dim: int = 6, seed: int = 0):
        self.in_dim = in_dim
        self.hidden = tuple(hidden)
        self.out_dim = out_dim
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self._layers: list = []
        width = in_dim
        for i, size in enumerate(self.hidden):
            self._layers.append(Dense(self.store, f"fc{i}", width, size, rng))
            self._layers.append(ReLU())
            width = size
        self._layers.append(Dense(self.store, "out", width, out_dim, rng))
        self.store.finalize()

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        if out.ndim == 1:
            out = out[None, :]
        for layer in self._layers:
            out = layer.forward(out)
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        grad = dlogits
        for layer in reversed(self._layers):
            grad = layer.backward(grad)
        return grad

    def distribution(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x))

    def architecture(self) -> dict:
        return {"kind": "mlp", "in_dim": self.in_dim,
                "hidden": list(self.hidden), "out_dim": self.out_dim}


class PolicyValueNet:
    """Conv trunk over the lossless planes with policy and value heads.

    Three convolutions (5x5, 3x3, 3x3; 25 filters each) feed three
    fully-connected layers of width 32; the 6-logit policy head and scalar
    value head share that trunk. Head weights start scaled down so the
    initial policy is near uniform and initial values near zero.
    """

    KERNELS = (5, 3, 3)
    FILTERS = 25
    FC_WIDTH = 32
    HEAD_SCALE = 0.01

    def __init__(self, in_shape: tuple[int, int, int], num_actions: int = 6,
                 seed: int = 0):
        self.in_shape = tuple(in_shape)
        self.num_actions = num_actions
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        channels, height, width = self.in_shape
        self._trunk: list = []
        prev = channels
        for i, kernel in enumerate(self.KERNELS):
            self._trunk.append(Conv2D(
                self.store, f"conv{i}", prev, self.FILTERS, kernel, rng))
            self._trunk.append(ReLU())
            prev = self.FILTERS
        self._trunk.append(Flatten())
        flat_dim = self.FILTERS * height * width
        for i in range(3):
            self._trunk.append(Dense(
                self.store, f"fc{i}", flat_dim, self.FC_WIDTH, rng))
            self._trunk.append(ReLU())
            flat_dim = self.FC_WIDTH
        self._policy_head = Dense(self.store, "policy", self.FC_WIDTH,
                                  num_actions, rng, scale=self.HEAD_SCALE)
        self._value_head = Dense(self.store, "value", self.FC_WIDTH, 1, rng,
                                 scale=self.HEAD_SCALE)
        self.store.finalize()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = np.asarray(x, dtype=np.float64)
        if out.ndim == 3:
            out = out[None, ...]
        for layer in self._trunk:
            out = layer.forward(out)
        logits = self._policy_head.forward(out)
        values = self._value_head.forward(out)[:, 0]
        return logits, values

    def backward(self, dlogits: np.ndarray, dvalues: np.ndarray) -> None:
        grad = self._policy_head.backward(dlogits)
        grad = grad + self._value_head.backward(dvalues[:, None])
        for layer in reversed(self._trunk):
            grad = layer.backward(grad)

    def distribution(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(x)
        return softmax(logits)

    def architecture(self) -> dict:
        return {"kind": "policy_value", "in_shape": list(self.in_shape),
                "num_actions": self.num_actions}


# -- optimizer ---------------------------------------------------------------


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(store.size)
        self.v = np.zeros(store.size)
        self.t = 0

    def step(self, lr: Optional[float] = None) -> None:
        rate = self.lr if lr is None else lr
        grad = self.store.grad
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        self.store.flat -= rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy_state_from(self, other: "Adam") -> None:
        """Bitwise copy of the moment estimates and step count."""
        self.m = other.m.copy()
        self.v = other.v.copy()
        self.t = other.t


# -- persistence -------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def save_model(model, path: str, extra: Optional[dict] = None) -> None:
    """Write an architecture header, the flat parameter vector, and any
    extra arrays (e.g. optimizer moments) to a single ``.npz`` file."""
    header = {"version": MODEL_FORMAT_VERSION, "arch": model.architecture()}
    arrays = {"header": np.frombuffer(
        json.dumps(header).encode(), dtype=np.uint8),
        "params": model.store.flat}
    for key, value in (extra or {}).items():
        arrays[f"extra_{key}"] = np.asarray(value)
    np.savez(path, **arrays)


def load_model(path: str):
    """Rebuild the network named in the header and restore its parameters.
    Returns (model, extra_arrays)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"].tobytes()).decode())
        if header.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported model version {header.get('version')}")
        arch = header["arch"]
        if arch["kind"] == "mlp":
            model = MLP(arch["in_dim"], arch["hidden"], arch["out_dim"])
        elif arch["kind"] == "policy_value":
            model = PolicyValueNet(
                tuple(arch["in_shape"]), arch["num_actions"])
        else:
            raise ValueError(f"{path}: unknown architecture {arch['kind']!r}")
        model.store.load_flat(data["params"])
        extra = {key[len("extra_"):]: data[key]
                 for key in data.files if key.startswith("extra_")}
    return model, extra


# -- finite differences -------------------------------------------------------


def gradient_check(loss_fn: Callable[[], float],
                   backward_fn: Callable[[], None],
                   store: ParamStore,
                   samples: Optional[int] = None,
                   delta: float = 1e-5,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Relative error between the analytic gradient and central differences.

    ``backward_fn`` runs forward+backward into ``store.grad``; ``loss_fn``
    evaluates the loss at the current parameters without touching gradients.
    Checks every coordinate unless ``samples`` is given.
    """
    store.zero_grad()
    backward_fn()
    analytic = store.grad.copy()
    if samples is None or samples >= store.size:
        indices = np.arange(store.size)
    else:
        indices = (rng or np.random.default_rng(0)).choice(
            store.size, size=samples, replace=False)
    numeric = np.zeros(len(indices))
    flat = store.flat
    for slot, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + delta
        hi = loss_fn()
        flat[i] = original - delta
        lo = loss_fn()
        flat[i] = original
        numeric[slot] = (hi - lo) / (2.0 * delta)
    picked = analytic[indices]
    scale = max(float(np.linalg.norm(picked)),
                float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(picked - numeric)) / scale
