"""Minimal dense networks with hand-written reverse-mode gradients."""

from __future__ import annotations

import numpy as np

__all__ = ["MLP", "Adam"]


class MLP:
    """Fully connected network, tanh on hidden layers, linear output.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``[2, 64, 64, 192]``.
    rng : numpy.random.Generator, optional
        Source for Glorot-uniform initialization.  When omitted the weights
        are zero and expected to be assigned (e.g. when loading).
    """

    def __init__(self, sizes, rng=None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("an MLP needs at least an input and an output layer")
        self.W, self.b = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
            else:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                self.W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    @property
    def params(self):
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def hidden(self, x):
        """Activations of the last hidden layer."""
        a = np.asarray(x, dtype=float)
        for W, b in zip(self.W[:-1], self.b[:-1]):
            a = np.tanh(a @ W + b)
        return a

    def forward(self, x, keep=False):
        """Evaluate the network; with ``keep`` also return the activation cache."""
        acts = [np.asarray(x, dtype=float)]
        a = acts[0]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            a = a @ W + b
            if k < last:
                a = np.tanh(a)
            if keep:
                acts.append(a)
        return (a, acts) if keep else a

    def backward(self, acts, dy):
        """Back-propagate ``dy = dL/dy`` through a kept forward pass.

        Returns
        -------
        grads : list of ndarray
            Gradients aligned with :attr:`params`.
        dx : ndarray
            Gradient with respect to the input.
        """
        grads = [None] * (2 * len(self.W))
        g = dy
        for k in range(len(self.W) - 1, -1, -1):
            if k < len(self.W) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.W[k].T
        return grads, g


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
