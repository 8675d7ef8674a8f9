"""Multilayer perceptron vector fields and their training loop.

The network plays the role of an autonomous vector field z -> f(z).  It is
trained by backpropagation through the unrolled fourth-order integrator
(discretize then optimize), so the gradients are exact for the discrete
loss and can be checked against central finite differences.

Parameters live in plain numpy arrays.  A trainable mask restricts updates
to the biases alone; in that mode the returned weights are bit-identical
to the input weights.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, TrainingError
from . import simkit

__all__ = [
    "Activation",
    "activation",
    "Mlp",
    "init_mlp",
    "forward",
    "forward_with_cache",
    "rollout",
    "TrainConfig",
    "loss_and_gradient",
    "evaluate_loss",
    "train",
    "save_model",
    "load_model",
    "TRAINABLE_ALL",
    "TRAINABLE_BIASES",
    "MODEL_FORMAT",
]

TRAINABLE_ALL = "all"
TRAINABLE_BIASES = "biases_only"

MODEL_FORMAT = "dissnode-mlp-1"

_ACTIVATION_KINDS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")


@dataclass(frozen=True)
class Activation:
    """Elementwise scalar nonlinearity with slope bounds [alpha, beta].

    alpha and beta are the extreme slopes of the function: every secant
    (phi(x) - phi(y)) / (x - y) lies in [alpha, beta].  They are fixed by
    the kind: relu, tanh and sigmoid have (0, 1); leaky_relu(a) has
    (min(a, 1), max(a, 1)); identity has (1, 1).
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _ACTIVATION_KINDS:
            raise ContractError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky_relu" and not self.param > 0.0:
            raise ContractError("leaky_relu needs a positive slope parameter")

    @property
    def alpha(self):
        if self.kind == "identity":
            return 1.0
        if self.kind == "leaky_relu":
            return min(self.param, 1.0)
        return 0.0

    @property
    def beta(self):
        if self.kind == "leaky_relu":
            return max(self.param, 1.0)
        return 1.0

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v.copy()
        if self.kind == "relu":
            return np.maximum(v, 0.0)
        if self.kind == "leaky_relu":
            return np.where(v >= 0.0, v, self.param * v)
        if self.kind == "tanh":
            return np.tanh(v)
        return 1.0 / (1.0 + np.exp(-v))

    def deriv(self, v):
        """Pointwise derivative; at a kink the negative-side branch is used."""
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return np.ones_like(v)
        if self.kind == "relu":
            return np.where(v > 0.0, 1.0, 0.0)
        if self.kind == "leaky_relu":
            return np.where(v > 0.0, 1.0, self.param)
        if self.kind == "tanh":
            t = np.tanh(v)
            return 1.0 - t * t
        s = 1.0 / (1.0 + np.exp(-v))
        return s * (1.0 - s)


def activation(kind, param=None):
    """Build an Activation, validating the parameter usage."""
    if kind == "leaky_relu":
        if param is None:
            raise ContractError("leaky_relu requires a slope parameter")
        return Activation(kind, float(param))
    if param is not None:
        raise ContractError(f"{kind} takes no parameter")
    return Activation(kind)


@dataclass
class Mlp:
    """Fully connected network z^i = phi_i(W_i z^{i-1} + b_i).

    layer_dims is (n_0, .., n_l); as a vector field the input and output
    widths must agree (n_0 = n_l) and the output layer is identity.
    """

    layer_dims: tuple
    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ContractError("layer_dims needs at least two positive entries")
        if dims[0] != dims[-1]:
            raise ContractError(
                f"vector field needs n_0 = n_l, got {dims[0]} and {dims[-1]}"
            )
        object.__setattr__(self, "layer_dims", dims)
        n_layers = len(dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise ContractError("weights, biases, activations must have one entry per layer")
        ws, bs = [], []
        for i in range(n_layers):
            w = np.asarray(self.weights[i], dtype=float)
            b = np.asarray(self.biases[i], dtype=float)
            if w.shape != (dims[i + 1], dims[i]):
                raise ContractError(
                    f"layer {i + 1}: weight shape {w.shape}, expected {(dims[i + 1], dims[i])}"
                )
            if b.shape != (dims[i + 1],):
                raise ContractError(f"layer {i + 1}: bias shape {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractError(f"layer {i + 1}: non-finite parameters")
            ws.append(w)
            bs.append(b)
        self.weights = ws
        self.biases = bs
        for i, act in enumerate(self.activations):
            if not isinstance(act, Activation):
                raise ContractError(f"layer {i + 1}: activations must be Activation instances")
        if self.activations[-1].kind != "identity":
            raise ContractError("output layer activation must be identity")

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return Mlp(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def init_mlp(layer_dims, hidden_activation, seed):
    """Fresh network: weights uniform in +-1/sqrt(fan_in), biases zero."""
    if not isinstance(hidden_activation, Activation):
        raise ContractError("hidden_activation must be an Activation")
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        bound = 1.0 / math.sqrt(dims[i])
        weights.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
        acts.append(hidden_activation if i < n_layers - 1 else Activation("identity"))
    return Mlp(dims, weights, biases, acts)


def _check_input(net, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (net.layer_dims[0],):
        raise ContractError(
            f"input shape {z.shape}, expected ({net.layer_dims[0]},)"
        )
    return z


def forward(net, z):
    """Evaluate the network at z."""
    z = _check_input(net, z)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = act.apply(w @ z + b)
    return z


def forward_with_cache(net, z):
    """Evaluate and keep per-layer intermediates.

    Returns (output, pre_activations, layer_inputs) where pre_activations[i]
    is v_{i+1} = W_{i+1} z^i + b_{i+1} and layer_inputs[i] is z^i.
    """
    z = _check_input(net, z)
    pres, ins = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        ins.append(z)
        v = w @ z + b
        pres.append(v)
        z = act.apply(v)
    return z, pres, ins


def _vjp(net, z, cot, grad_w, grad_b):
    """Accumulate parameter cotangents of cot . f(z); returns input cotangent."""
    _, pres, ins = forward_with_cache(net, z)
    delta = cot
    for i in range(net.n_layers - 1, -1, -1):
        dv = delta * net.activations[i].deriv(pres[i])
        grad_w[i] += np.outer(dv, ins[i])
        grad_b[i] += dv
        delta = net.weights[i].T @ dv
    return delta


def rollout(net, z0, steps, dt, t0=0.0):
    """Integrate the network as a vector field from z0."""
    return simkit.integrate_rk4(lambda t, z: forward(net, z), z0, t0, dt, steps)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the training loop.

    horizon counts integration steps per window, so a window must hold at
    least horizon + 1 rows.  trainable selects which parameters move.
    """

    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 8
    horizon: int = 50
    dt: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    trainable: str = TRAINABLE_ALL

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ContractError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.horizon < 1:
            raise ContractError("epochs, batch_size, horizon must be >= 1")
        if not self.dt > 0.0:
            raise ContractError("dt must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError("moment coefficients must lie in [0, 1)")
        if not self.eps > 0.0:
            raise ContractError("eps must be positive")
        if self.trainable not in (TRAINABLE_ALL, TRAINABLE_BIASES):
            raise ContractError(f"unknown trainable mask {self.trainable!r}")


def _step_cache(net, z, dt):
    """One RK4 step; returns the new state and the four stage inputs."""
    k1 = forward(net, z)
    a2 = z + 0.5 * dt * k1
    k2 = forward(net, a2)
    a3 = z + 0.5 * dt * k2
    k3 = forward(net, a3)
    a4 = z + dt * k3
    k4 = forward(net, a4)
    z_next = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z_next, (z, a2, a3, a4)


def _step_backward(net, stages, g, dt, grad_w, grad_b):
    """Pull a cotangent g on the step output back to the step input."""
    a1, a2, a3, a4 = stages
    c = dt / 6.0
    ga4 = _vjp(net, a4, c * g, grad_w, grad_b)
    ga3 = _vjp(net, a3, 2.0 * c * g + dt * ga4, grad_w, grad_b)
    ga2 = _vjp(net, a2, 2.0 * c * g + 0.5 * dt * ga3, grad_w, grad_b)
    ga1 = _vjp(net, a1, c * g + 0.5 * dt * ga2, grad_w, grad_b)
    return g + ga1 + ga2 + ga3 + ga4


def loss_and_gradient(net, windows, cfg):
    """Mean squared rollout error over a batch of windows, with gradients.

    Each window contributes a rollout of cfg.horizon steps from its first
    row, compared row-by-row against the window.  Gradients are exact for
    this discrete loss (reverse accumulation through every RK4 stage).
    Windows are processed in order and reduced by plain summation, so the
    result does not depend on any notion of worker count.
    """
    if len(windows) == 0:
        raise ContractError("empty batch")
    h = cfg.horizon
    d = net.layer_dims[0]
    grad_w = [np.zeros_like(w) for w in net.weights]
    grad_b = [np.zeros_like(b) for b in net.biases]
    n_terms = len(windows) * (h + 1) * d
    total = 0.0
    for bi, win in enumerate(windows):
        win = np.asarray(win, dtype=float)
        if win.ndim != 2 or win.shape[1] != d:
            raise ContractError(f"window {bi}: shape {win.shape}")
        if win.shape[0] < h + 1:
            raise ContractError(
                f"window {bi}: {win.shape[0]} rows < horizon + 1 = {h + 1}"
            )
        preds = [win[0]]
        stages = []
        z = win[0]
        for _ in range(h):
            z, st = _step_cache(net, z, cfg.dt)
            preds.append(z)
            stages.append(st)
        resid = np.stack(preds) - win[: h + 1]
        sq = float(np.sum(resid * resid))
        if not np.isfinite(sq):
            raise TrainingError(
                f"non-finite loss on window {bi}", batch_index=bi
            )
        total += sq
        # backward sweep, adding each row's residual cotangent on arrival
        g = (2.0 / n_terms) * resid[h]
        for k in range(h - 1, -1, -1):
            g = _step_backward(net, stages[k], g, cfg.dt, grad_w, grad_b)
            g = g + (2.0 / n_terms) * resid[k]
    if cfg.trainable == TRAINABLE_BIASES:
        for gw in grad_w:
            gw[:] = 0.0
    return total / n_terms, (grad_w, grad_b)


def _full_loss(net, windows, cfg):
    h = cfg.horizon
    d = net.layer_dims[0]
    total = 0.0
    for win in windows:
        z = win[0]
        preds = [z]
        for _ in range(h):
            z, _st = _step_cache(net, z, cfg.dt)
            preds.append(z)
        resid = np.stack(preds) - win[: h + 1]
        total += float(np.sum(resid * resid))
    return total / (len(windows) * (h + 1) * d)


def evaluate_loss(net, data, cfg):
    """Full-dataset rollout loss under cfg, without touching parameters."""
    if not isinstance(cfg, TrainConfig):
        raise ContractError("cfg must be a TrainConfig")
    if not isinstance(data, simkit.Dataset) or len(data.collections) == 0:
        raise ContractError("data must be a non-empty Dataset")
    for w in data.collections:
        if w.shape[0] < cfg.horizon + 1:
            raise ContractError("every collection needs at least horizon + 1 rows")
        if w.shape[1] != net.layer_dims[0]:
            raise ContractError("collection width does not match the network")
    return _full_loss(net, data.collections, cfg)


def train(net, data, cfg):
    """Run the optimizer and return the best parameters found.

    Deterministic for a fixed seed: shuffling, batching and the adaptive
    moment updates all run sequentially under one generator.  After each
    epoch the full-data loss is evaluated; the returned network is the
    snapshot with the lowest such loss (the input network counts as the
    epoch-zero candidate).  With trainable = biases_only every weight
    entry of the result is bit-identical to the input.
    """
    if not isinstance(cfg, TrainConfig):
        raise ContractError("cfg must be a TrainConfig")
    if not isinstance(data, simkit.Dataset) or len(data.collections) == 0:
        raise ContractError("data must be a non-empty Dataset")
    for w in data.collections:
        if w.shape[0] < cfg.horizon + 1:
            raise ContractError("every collection needs at least horizon + 1 rows")
        if w.shape[1] != net.layer_dims[0]:
            raise ContractError("collection width does not match the network")

    work = net.copy()
    windows = data.collections
    rng = np.random.default_rng(cfg.seed)
    bias_only = cfg.trainable == TRAINABLE_BIASES

    m_w = [np.zeros_like(w) for w in work.weights]
    v_w = [np.zeros_like(w) for w in work.weights]
    m_b = [np.zeros_like(b) for b in work.biases]
    v_b = [np.zeros_like(b) for b in work.biases]
    t = 0

    best = work.copy()
    best_loss = _full_loss(work, windows, cfg)

    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        for start in range(0, len(order), cfg.batch_size):
            batch = [windows[i] for i in order[start : start + cfg.batch_size]]
            _loss, (gw, gb) = loss_and_gradient(work, batch, cfg)
            t += 1
            c1 = 1.0 - cfg.beta1**t
            c2 = 1.0 - cfg.beta2**t
            if not bias_only:
                for i in range(work.n_layers):
                    m_w[i] = cfg.beta1 * m_w[i] + (1.0 - cfg.beta1) * gw[i]
                    v_w[i] = cfg.beta2 * v_w[i] + (1.0 - cfg.beta2) * gw[i] ** 2
                    work.weights[i] -= cfg.learning_rate * (m_w[i] / c1) / (
                        np.sqrt(v_w[i] / c2) + cfg.eps
                    )
            for i in range(work.n_layers):
                m_b[i] = cfg.beta1 * m_b[i] + (1.0 - cfg.beta1) * gb[i]
                v_b[i] = cfg.beta2 * v_b[i] + (1.0 - cfg.beta2) * gb[i] ** 2
                work.biases[i] -= cfg.learning_rate * (m_b[i] / c1) / (
                    np.sqrt(v_b[i] / c2) + cfg.eps
                )
            for w in work.weights + work.biases:
                if not np.all(np.isfinite(w)):
                    raise TrainingError("parameters became non-finite")
        epoch_loss = _full_loss(work, windows, cfg)
        if not np.isfinite(epoch_loss):
            raise TrainingError("full-data loss became non-finite")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = work.copy()
    return best


def save_model(path, net):
    """Write the network as JSON; float values survive bit-exactly."""
    doc = {
        "format": MODEL_FORMAT,
        "layer_dims": list(net.layer_dims),
        "activations": [
            {"kind": a.kind, "param": a.param} for a in net.activations
        ],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Read a network written by save_model."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"model file {path}: unknown format tag")
    for key in ("layer_dims", "activations", "weights", "biases"):
        if key not in doc:
            raise DataError(f"model file {path}: missing field {key!r}")
    try:
        acts = [
            Activation(a["kind"], float(a.get("param", 0.0)))
            for a in doc["activations"]
        ]
        net = Mlp(
            tuple(doc["layer_dims"]),
            [np.asarray(w, dtype=float) for w in doc["weights"]],
            [np.asarray(b, dtype=float) for b in doc["biases"]],
            acts,
        )
    except (ContractError, TypeError, KeyError, ValueError) as exc:
        raise DataError(f"model file {path}: {exc}") from exc
    return net
