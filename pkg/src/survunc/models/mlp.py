"""Minimal fully connected network with manual backpropagation and Adam."""

from __future__ import annotations

import numpy as np

OUTPUTS = ("identity", "sigmoid")


class MLP:
    """ReLU hidden layers, optional inverted dropout, identity or sigmoid output.

    ``layer_sizes`` runs from the input dimension to the output dimension,
    e.g. ``[d, 32, 1]``. Dropout is applied to hidden activations only.
    """

    def __init__(self, layer_sizes, dropout=0.0, output="identity", seed=0):
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.dropout = float(dropout)
        self.output = output
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            # He-uniform for ReLU layers
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self):
        return self.weights + self.biases

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy_params(self):
        return [p.copy() for p in self.params]

    def load_params(self, params):
        for p, src in zip(self.params, params):
            p[...] = src

    def forward(self, X, rng=None):
        """Output of shape (n, out). Dropout is active only when ``rng`` is given."""
        out, _ = self._forward(X, rng)
        return out

    def _forward(self, X, rng=None):
        a = np.asarray(X, dtype=float)
        cache = []
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if k < last:
                h = np.maximum(z, 0.0)
                mask = None
                if rng is not None and self.dropout > 0:
                    mask = (rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
                    h = h * mask
                cache.append((a, z, mask))
                a = h
            else:
                cache.append((a, z, None))
                a = 1.0 / (1.0 + np.exp(-z)) if self.output == "sigmoid" else z
        return a, cache

    def backward(self, cache, out, d_out):
        """Gradients (weights..., biases...) given dLoss/dOutput."""
        n_layers = len(self.weights)
        gW = [None] * n_layers
        gb = [None] * n_layers
        delta = d_out * out * (1.0 - out) if self.output == "sigmoid" else d_out
        for k in range(n_layers - 1, -1, -1):
            a, z, _ = cache[k]
            gW[k] = a.T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                a_prev, z_prev, mask = cache[k - 1]
                delta = delta @ self.weights[k].T
                if mask is not None:
                    delta = delta * mask
                delta = delta * (z_prev > 0)
        return gW + gb

    def loss_and_grad(self, X, loss_fn, rng=None):
        """``loss_fn(out) -> (loss, dloss/dout)``; returns (loss, grads)."""
        out, cache = self._forward(X, rng)
        loss, d_out = loss_fn(out)
        return loss, self.backward(cache, out, d_out)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse_loss(y):
    y = np.asarray(y, dtype=float).reshape(-1, 1)

    def fn(out):
        diff = out - y
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size

    return fn


def mlp_state(net, prefix="net"):
    arrays = {}
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}_W{k}"] = W
        arrays[f"{prefix}_b{k}"] = b
    params = {"layer_sizes": net.layer_sizes, "dropout": net.dropout, "output": net.output}
    return params, arrays


def mlp_from_state(params, arrays, prefix="net"):
    net = MLP(params["layer_sizes"], params["dropout"], params["output"])
    for k in range(len(net.weights)):
        net.weights[k] = np.array(arrays[f"{prefix}_W{k}"], dtype=float)
        net.biases[k] = np.array(arrays[f"{prefix}_b{k}"], dtype=float)
    return net
