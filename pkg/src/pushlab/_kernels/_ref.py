"""Pure-numpy reference implementations of the hot kernels.

Same contracts as the compiled module `pushlab._kernels._core`; used as the
fallback when the extension is unavailable and as the ground truth in the
backend-equivalence tests.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def mlp_forward(x, weights, biases):
    """Forward pass of a tanh MLP with a linear output layer.

    x: (B, D) float64. weights[i]: (in_i, out_i), biases[i]: (out_i,).
    Returns (hidden, out) where hidden is the list of post-tanh activations
    for each hidden layer and out is the (B, out) linear output.
    """
    hidden = []
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
        hidden.append(h)
    out = h @ weights[-1] + biases[-1]
    return hidden, out


def mlp_backward(x, hidden, weights, grad_out):
    """Backprop grad_out (B, out) through the MLP; grads summed over batch.

    Returns (grad_weights, grad_biases) with the same shapes as the params.
    """
    grad_w = [None] * len(weights)
    grad_b = [None] * len(weights)
    g = np.asarray(grad_out, dtype=np.float64)
    last_in = hidden[-1] if hidden else x
    grad_w[-1] = last_in.T @ g
    grad_b[-1] = g.sum(axis=0)
    g = g @ weights[-1].T
    for layer in range(len(hidden) - 1, -1, -1):
        g = g * (1.0 - hidden[layer] ** 2)
        prev = hidden[layer - 1] if layer > 0 else x
        grad_w[layer] = prev.T @ g
        grad_b[layer] = g.sum(axis=0)
        if layer > 0:
            g = g @ weights[layer].T
    return grad_w, grad_b


def gae_advantages(rewards, values, dones, gamma, lam):
    """Recursive generalized-advantage estimator.

    rewards, dones: (T,); values: (T+1,) with the bootstrap value appended.
    dones[t] == 1.0 cuts both the bootstrap and the advantage recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.shape[0]
    if values.shape[0] != n + 1 or dones.shape[0] != n:
        raise ValueError(
            f"length mismatch: rewards={n}, values={values.shape[0]}, dones={dones.shape[0]}"
        )
    adv = np.empty(n, dtype=np.float64)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
    return adv
