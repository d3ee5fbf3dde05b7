"""Shared numeric oracles for the model tests."""

import numpy as np

from typecoref.neural import Parameters


def numeric_gradients(build_loss, params: Parameters, eps: float = 1e-4):
    """Central finite differences of a scalar loss for every parameter element.

    ``build_loss`` must recompute the loss from the current parameter values
    on each call; parameters should be float64 for a trustworthy comparison.
    """
    grads = {}
    for name, leaf in params.items():
        flat = leaf.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = build_loss()
            flat[i] = original - eps
            down = build_loss()
            flat[i] = original
            grad[i] = (up - down) / (2.0 * eps)
        grads[name] = grad.reshape(leaf.data.shape)
    return grads


def assert_grads_close(analytic, numeric, rel_tol: float = 1e-3):
    """Relative comparison with an absolute floor for near-zero entries."""
    for name in numeric:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = np.max(np.abs(a - n) / denom)
        assert worst <= rel_tol, f"gradient mismatch for {name}: rel err {worst:.3e}"


def reference_lstm_states(x, w_ih, w_hh, b, reverse=False):
    """Straight-line scalar LSTM, coded independently of the graph engine."""

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    hidden = w_hh.shape[0]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    order = range(len(x) - 1, -1, -1) if reverse else range(len(x))
    states = {}
    for t in order:
        z = x[t] @ w_ih + h @ w_hh + b
        i = sig(z[0:hidden])
        f = sig(z[hidden : 2 * hidden])
        g = np.tanh(z[2 * hidden : 3 * hidden])
        o = sig(z[3 * hidden : 4 * hidden])
        c = f * c + i * g
        h = o * np.tanh(c)
        states[t] = h
    return np.stack([states[t] for t in range(len(x))])
