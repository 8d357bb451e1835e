"""A small MLP embedding network with hand-written backprop and AdaGrad.

Images are flattened and passed through ``tanh`` hidden layers and a final
linear layer; the output is divided by its Euclidean norm (floored at
``norm_eps``) when ``normalize_output`` is set. Training minimizes the mean
squared-distance triplet hinge

    max(0, margin + |f(a) - f(p)|^2 - |f(a) - f(n)|^2)

over a batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")

CHECKPOINT_MAGIC = b"PEMBCKPT"
CHECKPOINT_VERSION = 1


class ShapeMismatchError(ValueError):
    pass


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(name, y):
    """Derivative of the activation expressed through its output ``y``."""
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (y > 0).astype(y.dtype)
    return np.ones_like(y)


class EmbeddingModel:
    """Feedforward network ``layer_sizes[0] -> ... -> layer_sizes[-1]``.

    ``weights[l]`` has shape ``(layer_sizes[l], layer_sizes[l + 1])``; the
    activation is applied after every layer except the last.
    """

    def __init__(
        self,
        weights,
        biases,
        activation: str = "tanh",
        normalize_output: bool = True,
        norm_eps: float = 1e-12,
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatchError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[0] != self.weights[l - 1].shape[1]:
                raise ShapeMismatchError(f"layer {l} input width does not match previous output")
        self.activation = activation
        self.normalize_output = bool(normalize_output)
        self.norm_eps = float(norm_eps)

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator, **kwargs) -> "EmbeddingModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, **kwargs)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> list[np.ndarray]:
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params) -> "EmbeddingModel":
        return EmbeddingModel(
            params[0::2], params[1::2], self.activation, self.normalize_output, self.norm_eps
        )

    def copy(self) -> "EmbeddingModel":
        return self.with_params([p.copy() for p in self.params])

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _as_batch(self, images) -> tuple[np.ndarray, bool]:
        """Flatten to ``(n, width)``; also report whether a single sample was given."""
        x = np.asarray(images, dtype=np.float64)
        width = self.layer_sizes[0]
        if x.ndim == 1 and x.size == width:
            return x[None], True
        if x.ndim == 2 and x.shape[1] == width:
            return x, False
        if x.ndim == 2 and x.size == width:
            return x.reshape(1, width), True
        if x.ndim == 3 and x.shape[1] * x.shape[2] == width:
            return x.reshape(len(x), width), False
        raise ShapeMismatchError(f"input of shape {x.shape} does not match model input width {width}")

    def _forward_cache(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = _act(self.activation, h)
            acts.append(h)
        z = h
        if self.normalize_output:
            r = np.maximum(np.sqrt(np.einsum("ij,ij->i", z, z)), self.norm_eps)[:, None]
            e = z / r
        else:
            r = None
            e = z
        return acts, r, e

    def forward(self, images) -> np.ndarray:
        """Embed one image ``(side, side)`` -> ``(D,)`` or a batch ``(n, side, side)`` -> ``(n, D)``.

        Already-flattened inputs ``(width,)`` / ``(n, width)`` are accepted too.
        """
        x, single = self._as_batch(images)
        _, _, e = self._forward_cache(x)
        return e[0] if single else e

    def backward(self, acts, r, e, grad_e) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(embedding) for a cached forward pass."""
        if self.normalize_output:
            small = (r <= self.norm_eps)[:, 0]
            g = (grad_e - e * np.einsum("ij,ij->i", e, grad_e)[:, None]) / r
            if np.any(small):
                g[small] = grad_e[small] / self.norm_eps
        else:
            g = grad_e
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = acts[l].T @ g
            grads_b[l] = g.sum(axis=0)
            if l:
                g = (g @ self.weights[l].T) * _act_grad(self.activation, acts[l])
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out


def triplet_loss(e_a, e_p, e_n, margin: float):
    """Squared-distance triplet hinge. Works on single vectors or row batches."""
    e_a, e_p, e_n = (np.asarray(v, dtype=np.float64) for v in (e_a, e_p, e_n))
    d_ap = np.sum((e_a - e_p) ** 2, axis=-1)
    d_an = np.sum((e_a - e_n) ** 2, axis=-1)
    loss = np.maximum(0.0, margin + d_ap - d_an)
    return float(loss) if loss.ndim == 0 else loss


def _stack_batch(model, batch):
    anchors, positives, negatives = batch
    xa, xp, xn = (model._as_batch(v)[0] for v in (anchors, positives, negatives))
    if not (len(xa) == len(xp) == len(xn)) or len(xa) == 0:
        raise ValueError("triplet batch parts must be non-empty and equal length")
    return np.concatenate([xa, xp, xn]), len(xa)


def batch_loss(model: EmbeddingModel, batch, margin: float) -> float:
    """Mean triplet loss of ``batch = (anchors, positives, negatives)`` image arrays."""
    x, b = _stack_batch(model, batch)
    _, _, e = model._forward_cache(x)
    return float(np.mean(triplet_loss(e[:b], e[b : 2 * b], e[2 * b :], margin)))


def loss_and_gradients(model: EmbeddingModel, batch, margin: float):
    """Mean batch loss and its gradient for every parameter (in ``model.params`` order)."""
    x, b = _stack_batch(model, batch)
    acts, r, e = model._forward_cache(x)
    ea, ep, en = e[:b], e[b : 2 * b], e[2 * b :]
    losses = triplet_loss(ea, ep, en, margin)
    active = (losses > 0).astype(np.float64)[:, None] * (2.0 / b)
    grad_e = np.concatenate([active * (en - ep), active * (ep - ea), active * (ea - en)])
    return float(np.mean(losses)), model.backward(acts, r, e, grad_e)


def gradients(model: EmbeddingModel, batch, margin: float) -> list[np.ndarray]:
    return loss_and_gradients(model, batch, margin)[1]


def numerical_gradients(model: EmbeddingModel, batch, margin: float, h: float = 1e-5):
    """Central finite differences of the mean batch loss, parameter by parameter."""
    params = [p.copy() for p in model.params]
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = batch_loss(model.with_params(params), batch, margin)
            flat[i] = orig - h
            down = batch_loss(model.with_params(params), batch, margin)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric, eps: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, eps) over all entries.

    The ``eps`` floor keeps structurally zero gradients, where central
    differences return pure roundoff (~1e-11), from dominating the result.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), eps)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def gradient_check(model: EmbeddingModel, batch, margin: float, h: float = 1e-5, eps: float = 1e-6,
                   analytic=None) -> float:
    """Max relative error between backprop and central differences.

    Intended for models with at most ~1e3 parameters. ``analytic`` overrides
    the backprop gradients, e.g. to test the detector itself.
    """
    if analytic is None:
        analytic = gradients(model, batch, margin)
    numeric = numerical_gradients(model, batch, margin, h)
    return relative_error(analytic, numeric, eps)


@dataclass
class AdaGradState:
    accumulators: list

    @classmethod
    def zeros_like(cls, params) -> "AdaGradState":
        return cls([np.zeros_like(p) for p in params])


def adagrad_update(params, grads, state: AdaGradState, lr: float, eps: float = 1e-8):
    """One AdaGrad step. Returns ``(new_params, new_state)``; inputs are not modified.

    acc <- acc + g^2;  p <- p - lr * g / (sqrt(acc) + eps)
    """
    new_params, new_acc = [], []
    for p, g, acc in zip(params, grads, state.accumulators):
        if p.shape != g.shape or p.shape != acc.shape:
            raise ShapeMismatchError("parameter, gradient and accumulator shapes differ")
        acc = acc + g * g
        new_acc.append(acc)
        new_params.append(p - lr * g / (np.sqrt(acc) + eps))
    return new_params, AdaGradState(new_acc)


_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Binary checkpoint: header, layer sizes, then little-endian float64 parameters.

    Layout (all integers little-endian uint32)::

        magic b"PEMBCKPT" | version | flags (bit 0: normalize_output)
        | activation code | n_sizes | sizes... | norm_eps (f64)
        | W0 (row-major) | b0 | W1 | b1 | ...
    """
    sizes = model.layer_sizes
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<IIII{len(sizes)}Id",
        CHECKPOINT_VERSION,
        int(model.normalize_output),
        _ACT_CODES[model.activation],
        len(sizes),
        *sizes,
        model.norm_eps,
    )
    with open(Path(path), "wb") as fh:
        fh.write(header)
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> EmbeddingModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a pose embedding checkpoint")
    version, flags, act, n = struct.unpack_from("<IIII", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 8 + 16
    sizes = struct.unpack_from(f"<{n}I", raw, off)
    off += 4 * n
    (norm_eps,) = struct.unpack_from("<d", raw, off)
    off += 8
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(data[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != data.size:
        raise ValueError("checkpoint parameter count does not match its layer sizes")
    return EmbeddingModel(weights, biases, ACTIVATIONS[act], bool(flags & 1), norm_eps)
