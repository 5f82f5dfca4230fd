#!/usr/bin/env python3
"""
dCMF Autoencoder - Per-Entity Fully Connected Autoencoder
=========================================================

Adaptive layer sizing from the fraction f_k, Glorot-uniform initialization,
forward pass, exact backpropagation with gradient injection at the
bottleneck, SGD (optionally with momentum) and Adam updates, and optional
pretraining on the autoencoder's own reconstruction loss.

Weight matrices are stored fan_in x fan_out so a batch flows as
``a_next = act(a @ W + b)``.

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from dcmf_errors import DomainError, ShapeError
from dcmf_numerics import RealMatrix, to_dense

logger = logging.getLogger(__name__)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


# activation -> (function, derivative expressed through the activation's output)
ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (_relu, lambda a: (a > 0).astype(np.float64)),
    "sigmoid": (expit, lambda a: a * (1.0 - a)),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class ArchitecturePlan:
    """Layer widths of one autoencoder"""
    input_dim: int
    encoder_sizes: Tuple[int, ...]
    decoder_sizes: Tuple[int, ...]
    activation: str = "tanh"

    @property
    def K(self) -> int:
        return self.encoder_sizes[-1]

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.encoder_sizes + self.decoder_sizes

    @property
    def n_layers(self) -> int:
        return len(self.encoder_sizes) + len(self.decoder_sizes)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.encoder_sizes)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(dims[:-1], dims[1:]))


@dataclass
class AEWeights:
    """Weights (fan_in x fan_out) and biases per layer; also used for gradients"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: Optional[int] = None

    def copy(self) -> "AEWeights":
        return AEWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def zeros_like(self) -> "AEWeights":
        return AEWeights([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.weights + self.biases)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def plan_architecture(input_dim: int, f_k: float, K: int, activation: str = "tanh") -> ArchitecturePlan:
    """Widths input_dim*f_k, *f_k^2, ... while they stay above K, then K as bottleneck"""
    if not 0.0 < f_k < 1.0:
        raise DomainError(f"f_k must lie in (0, 1), got {f_k}")
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    if input_dim < 1:
        raise DomainError(f"input_dim must be >= 1, got {input_dim}")
    if activation not in ACTIVATIONS:
        raise DomainError(f"unknown activation '{activation}', expected one of {sorted(ACTIVATIONS)}")
    if K >= input_dim:
        logger.warning("bottleneck K=%d is not below input dimension %d; using a single encoding layer",
                       K, input_dim)
    sizes: List[int] = []
    current = input_dim
    while True:
        nxt = _round_half_up(current * f_k)
        if nxt >= current:
            nxt = current - 1
        if nxt <= K:
            break
        sizes.append(nxt)
        current = nxt
    encoder = tuple(sizes) + (K,)
    decoder = tuple(reversed(encoder[:-1])) + (input_dim,)
    return ArchitecturePlan(input_dim, encoder, decoder, activation)


def init_weights(plan: ArchitecturePlan, seed: int, rng: Optional[np.random.Generator] = None) -> AEWeights:
    """Glorot-uniform weights, zero biases; deterministic for a seed"""
    rng = rng if rng is not None else np.random.default_rng(seed)
    dims = plan.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AEWeights(weights, biases, seed)


def _check_weights(w: AEWeights, plan: ArchitecturePlan):
    dims = plan.layer_dims
    if len(w.weights) != len(dims) - 1:
        raise ShapeError(f"weights have {len(w.weights)} layers, plan has {len(dims) - 1}")
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if w.weights[i].shape != (fan_in, fan_out):
            raise ShapeError(f"layer {i} weight", w.weights[i].shape, (fan_in, fan_out))


def forward_trace(w: AEWeights, plan: ArchitecturePlan, batch: RealMatrix) -> List[np.ndarray]:
    """All layer activations [input, layer 1, ..., reconstruction]"""
    x = to_dense(batch)
    if x.shape[1] != plan.input_dim:
        raise ShapeError("batch width does not match autoencoder input", x.shape, (x.shape[0], plan.input_dim))
    act, _ = ACTIVATIONS[plan.activation]
    activations = [x]
    for W, b in zip(w.weights, w.biases):
        activations.append(act(activations[-1] @ W + b))
    return activations


def forward(w: AEWeights, plan: ArchitecturePlan, batch: RealMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """(bottleneck encoding, reconstruction)"""
    activations = forward_trace(w, plan, batch)
    return activations[plan.n_encoder_layers], activations[-1]


def backward(w: AEWeights, plan: ArchitecturePlan, batch: RealMatrix, output_grad: np.ndarray,
             encoding_grad: np.ndarray, activations: Optional[List[np.ndarray]] = None) -> AEWeights:
    """Exact gradients for losses entering through the reconstruction and the bottleneck"""
    if activations is None:
        activations = forward_trace(w, plan, batch)
    recon = activations[-1]
    encoding = activations[plan.n_encoder_layers]
    output_grad = np.asarray(output_grad, dtype=np.float64)
    encoding_grad = np.asarray(encoding_grad, dtype=np.float64)
    if output_grad.shape != recon.shape:
        raise ShapeError("output gradient does not match reconstruction", output_grad.shape, recon.shape)
    if encoding_grad.shape != encoding.shape:
        raise ShapeError("encoding gradient does not match encoding", encoding_grad.shape, encoding.shape)

    _, dact = ACTIVATIONS[plan.activation]
    grads = w.zeros_like()
    upstream = output_grad
    for layer in range(plan.n_layers, 0, -1):
        if layer == plan.n_encoder_layers:
            upstream = upstream + encoding_grad
        a_out = activations[layer]
        a_in = activations[layer - 1]
        dz = upstream * dact(a_out)
        grads.weights[layer - 1] = a_in.T @ dz
        grads.biases[layer - 1] = dz.sum(axis=0)
        if layer > 1:
            upstream = dz @ w.weights[layer - 1].T
    return grads


def sgd_step(w: AEWeights, grads: AEWeights, learning_rate: float, weight_decay: float) -> AEWeights:
    """w <- w - lr * (grad + weight_decay * w); biases are not decayed"""
    if learning_rate <= 0:
        raise DomainError(f"learning rate must be positive, got {learning_rate}")
    if weight_decay < 0:
        raise DomainError(f"weight decay must be non-negative, got {weight_decay}")
    weights = [W - learning_rate * (G + weight_decay * W) for W, G in zip(w.weights, grads.weights)]
    biases = [b - learning_rate * g for b, g in zip(w.biases, grads.biases)]
    return AEWeights(weights, biases, w.seed)


class SGDOptimizer:
    """Plain SGD, classical momentum when momentum > 0"""

    def __init__(self, momentum: float = 0.0):
        if not 0.0 <= momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self._velocity: Optional[AEWeights] = None

    def step(self, w: AEWeights, grads: AEWeights, learning_rate: float, weight_decay: float) -> AEWeights:
        if self.momentum == 0.0:
            return sgd_step(w, grads, learning_rate, weight_decay)
        decayed = AEWeights([G + weight_decay * W for W, G in zip(w.weights, grads.weights)], list(grads.biases))
        if self._velocity is None:
            self._velocity = decayed.zeros_like()
        v = self._velocity
        v.weights = [self.momentum * vw + g for vw, g in zip(v.weights, decayed.weights)]
        v.biases = [self.momentum * vb + g for vb, g in zip(v.biases, decayed.biases)]
        return sgd_step(w, v, learning_rate, 0.0)


class AdamOptimizer:
    """Adam with L2 weight decay folded into the gradient (biases excluded)"""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m: Optional[AEWeights] = None
        self._v: Optional[AEWeights] = None
        self._t = 0

    def step(self, w: AEWeights, grads: AEWeights, learning_rate: float, weight_decay: float) -> AEWeights:
        if learning_rate <= 0:
            raise DomainError(f"learning rate must be positive, got {learning_rate}")
        g_w = [G + weight_decay * W for W, G in zip(w.weights, grads.weights)]
        g_b = list(grads.biases)
        if self._m is None:
            self._m, self._v = w.zeros_like(), w.zeros_like()
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self._t
        correction2 = 1.0 - b2 ** self._t

        def update(params, gs, ms, vs):
            out = []
            for i, (p, g) in enumerate(zip(params, gs)):
                ms[i] = b1 * ms[i] + (1.0 - b1) * g
                vs[i] = b2 * vs[i] + (1.0 - b2) * g * g
                m_hat = ms[i] / correction1
                v_hat = vs[i] / correction2
                out.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + self.eps))
            return out

        weights = update(w.weights, g_w, self._m.weights, self._v.weights)
        biases = update(w.biases, g_b, self._m.biases, self._v.biases)
        return AEWeights(weights, biases, w.seed)


def make_optimizer(name: str = "sgd", momentum: float = 0.0):
    if name == "sgd":
        return SGDOptimizer(momentum)
    if name == "adam":
        return AdamOptimizer()
    raise DomainError(f"unknown optimizer '{name}', expected one of {OPTIMIZERS}")


def rms_loss(target: np.ndarray, output: np.ndarray) -> Tuple[float, np.ndarray]:
    """Root-mean-square error over all entries and its gradient w.r.t. output"""
    diff = output - target
    n = diff.size
    if n == 0:
        return 0.0, np.zeros_like(diff)
    loss = float(np.sqrt(np.mean(diff * diff)))
    if loss == 0.0 or not np.isfinite(loss):
        return loss, np.zeros_like(diff)
    return loss, diff / (n * loss)


def pretrain(w: AEWeights, plan: ArchitecturePlan, data: RealMatrix, learning_rate: float,
             convergence_threshold: float, max_epochs: int, enabled: bool = True,
             weight_decay: float = 0.0, optimizer: str = "sgd", momentum: float = 0.0) -> AEWeights:
    """Train the autoencoder alone on its reconstruction loss until the epoch gain drops below the threshold

    On divergence the last weights with a finite loss are returned.
    """
    if not enabled:
        return w
    x = to_dense(data)
    if x.shape[1] != plan.input_dim:
        raise ShapeError("pretraining data width does not match autoencoder input", x.shape)
    opt = make_optimizer(optimizer, momentum)
    activations = forward_trace(w, plan, x)
    previous, _ = rms_loss(x, activations[-1])
    encoding_zero = np.zeros_like(activations[plan.n_encoder_layers])
    for epoch in range(1, max_epochs + 1):
        _, out_grad = rms_loss(x, activations[-1])
        with np.errstate(over="ignore", invalid="ignore"):
            grads = backward(w, plan, x, out_grad, encoding_zero, activations)
            stepped = opt.step(w, grads, learning_rate, weight_decay)
            trial = forward_trace(stepped, plan, x)
            loss, _ = rms_loss(x, trial[-1])
        if not np.isfinite(loss) or not stepped.is_finite():
            logger.warning("pretraining diverged at epoch %d; keeping the epoch %d weights", epoch, epoch - 1)
            break
        w, activations = stepped, trial
        if previous - loss < convergence_threshold:
            logger.debug("pretraining converged after %d epochs (l_E=%.6f)", epoch, loss)
            break
        previous = loss
    return w
