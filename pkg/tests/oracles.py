"""Independent reference computations used as test oracles (plain numpy, no tape)."""

import numpy as np


def np_softmax(x, axis=-1):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def np_layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def np_gelu(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))


def dense_attention(x, src, w_q, w_k, w_v, heads, allowed=None):
    """Per-head loop over (T, e) inputs; ``allowed`` (T, S) bool hides keys."""
    t, e = x.shape
    dk = e // heads
    out = np.zeros((t, e))
    for h in range(heads):
        cols = slice(h * dk, (h + 1) * dk)
        q, k, v = x @ w_q[:, cols], src @ w_k[:, cols], src @ w_v[:, cols]
        scores = q @ k.T / np.sqrt(dk)
        if allowed is not None:
            scores = np.where(allowed, scores, -np.inf)
        out[:, cols] = np_softmax(scores) @ v
    return out


def graph_encoder_reference(enc, adjacency):
    """Dense reference for the graph encoder on one (N, N) adjacency."""
    f = enc.nodes.data
    g = enc.gsa
    att = dense_attention(f, f, g.w_q.data, g.w_k.data, g.w_v.data, g.heads, adjacency)
    att = att @ g.out.weight.data + g.out.bias.data
    e = att + f
    hidden = np_gelu(e @ enc.ffn.inner.weight.data + enc.ffn.inner.bias.data)
    ffn = hidden @ enc.ffn.outer.weight.data + enc.ffn.outer.bias.data
    return np_layer_norm(ffn + e, enc.ln.gamma.data, enc.ln.beta.data, enc.ln.eps)
