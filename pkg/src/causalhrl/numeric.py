"""Dense networks, manual backprop and Adam, all in float64 numpy.

Two heads are supported: ``"softmax"`` produces a categorical distribution and
is trained with mean negative log-likelihood; ``"q"`` produces raw values and
is trained with half the mean squared error on the selected outputs.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12
MAX_NLL = -np.log(PROB_FLOOR)


class ConfigurationError(ValueError):
    pass


@dataclass
class DenseNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str = "softmax"

    def __post_init__(self):
        if self.head not in ("softmax", "q"):
            raise ConfigurationError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ConfigurationError("layer count does not match layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise ConfigurationError(f"layer {l} has shape {w.shape}/{b.shape}, "
                                         f"expected ({self.layer_dims[l + 1]}, {self.layer_dims[l]})")

    @classmethod
    def create(cls, layer_dims, head="softmax", rng=None, zero=False):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, or all zeros."""
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            if zero:
                weights.append(np.zeros((fan_out, fan_in)))
                biases.append(np.zeros(fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
                biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(list(layer_dims), weights, biases, head)

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def grow_input(self, n: int) -> None:
        """Append ``n`` zero-initialised input columns (existing weights kept)."""
        if n <= 0:
            return
        w = self.weights[0]
        self.weights[0] = np.hstack([w, np.zeros((w.shape[0], n))])
        self.layer_dims[0] += n

    def grow_output(self, n: int) -> None:
        """Append ``n`` zero-initialised output units."""
        if n <= 0:
            return
        w = self.weights[-1]
        self.weights[-1] = np.vstack([w, np.zeros((n, w.shape[1]))])
        self.biases[-1] = np.concatenate([self.biases[-1], np.zeros(n)])
        self.layer_dims[-1] += n


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_input(net: DenseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.layer_dims[0]:
        raise ConfigurationError(f"input has {x.shape[-1]} features, net expects {net.layer_dims[0]}")
    return x


def _activations(net: DenseNet, x: np.ndarray):
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def logits(net: DenseNet, x) -> np.ndarray:
    """Pre-head outputs; works on a single vector or a batch."""
    x = _check_input(net, x)
    return _activations(net, x)[-1]


def forward(net: DenseNet, x) -> np.ndarray:
    """Probabilities for a softmax head, raw values for a Q head."""
    out = logits(net, x)
    return softmax(out) if net.head == "softmax" else out


def nll(probs, target: int) -> float:
    p = float(np.asarray(probs)[target])
    return float(-np.log(max(p, PROB_FLOOR)))


def log_likelihood(net: DenseNet, x, targets) -> np.ndarray:
    """Per-row log P(target | x) for a softmax net, floored like ``nll``."""
    lp = log_softmax(logits(net, x))
    rows = np.arange(lp.shape[0])
    return np.maximum(lp[rows, np.asarray(targets)], -MAX_NLL)


def backward(net: DenseNet, x, targets, actions=None):
    """Loss and parameter gradients (ordered like ``net.params``).

    Softmax head: mean NLL of integer ``targets``.
    Q head: 0.5 * mean((Q[action] - target)^2); ``actions`` selects the output
    per row, or, when omitted, ``targets`` is a full (batch, out) matrix.
    """
    x = _check_input(net, x)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[0]
    if n == 0:
        raise ConfigurationError("empty batch")
    acts = _activations(net, x)
    out = acts[-1]
    rows = np.arange(n)
    if net.head == "softmax":
        targets = np.asarray(targets, dtype=int).reshape(n)
        lp = log_softmax(out)
        loss = float(np.mean(np.minimum(-lp[rows, targets], MAX_NLL)))
        delta = np.exp(lp)
        delta[rows, targets] -= 1.0
        delta /= n
    else:
        targets = np.asarray(targets, dtype=np.float64)
        if actions is None:
            targets = targets.reshape(out.shape)
            err = out - targets
            loss = float(0.5 * np.mean(np.sum(err ** 2, axis=1)))
            delta = err / n
        else:
            actions = np.asarray(actions, dtype=int).reshape(n)
            err = out[rows, actions] - targets.reshape(n)
            loss = float(0.5 * np.mean(err ** 2))
            delta = np.zeros_like(out)
            delta[rows, actions] = err / n

    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l]) * (acts[l] > 0)
    return loss, [*gw, *gb]


def loss_value(net: DenseNet, x, targets, actions=None) -> float:
    x = _check_input(net, x)
    if x.ndim == 1:
        x = x[None, :]
    out = _activations(net, x)[-1]
    rows = np.arange(x.shape[0])
    if net.head == "softmax":
        lp = log_softmax(out)
        return float(np.mean(np.minimum(-lp[rows, np.asarray(targets, dtype=int)], MAX_NLL)))
    targets = np.asarray(targets, dtype=np.float64)
    if actions is None:
        return float(0.5 * np.mean(np.sum((out - targets.reshape(out.shape)) ** 2, axis=1)))
    err = out[rows, np.asarray(actions, dtype=int)] - targets.reshape(-1)
    return float(0.5 * np.mean(err ** 2))


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def grow_like(self, params) -> None:
        """Zero-pad moments after a network changed shape."""
        for k, p in enumerate(params):
            for moments in (self.first_moment, self.second_moment):
                old = moments[k]
                if old.shape != p.shape:
                    new = np.zeros_like(p)
                    new[tuple(slice(0, s) for s in old.shape)] = old
                    moments[k] = new


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


@dataclass
class Trainer:
    """A net bundled with its optimizer state."""

    net: DenseNet
    lr: float
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = AdamState.zeros_like(self.net.params)

    def step(self, x, targets, actions=None) -> float:
        loss, grads = backward(self.net, x, targets, actions)
        adam_step(self.net.params, grads, self.state, self.lr)
        return loss


def grad_check(net: DenseNet, x, targets, h: float = 1e-5, actions=None) -> float:
    """Worst relative error between ``backward`` and central differences."""
    if h <= 0:
        raise ValueError("h must be positive")
    _, grads = backward(net, x, targets, actions)
    worst = 0.0
    for p, g in zip(net.params, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_value(net, x, targets, actions)
            p[idx] = orig - h
            down = loss_value(net, x, targets, actions)
            p[idx] = orig
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(g[idx]), 1e-7)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst
