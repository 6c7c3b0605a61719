"""Compiled minibatch epoch for the dense classifiers in :mod:`pfairdp.model`.

Mirrors ``Mlp.batch_gradient`` / ``Mlp.clipped_gradient_sum`` followed by an
SGD or Adam step, one minibatch at a time. Gaussian noise is drawn by the
caller (one row per step) so the random stream stays in numpy.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def run_epoch(
    params,
    fan_in,
    fan_out,
    w_off,
    b_off,
    x,
    y,
    perm,
    batch_size,
    clip,
    use_clip,
    noise,
    use_noise,
    adam,
    lr,
    m,
    v,
    t0,
    beta1,
    beta2,
    eps,
):
    n_layers = fan_in.size
    max_w = 1
    for i in range(n_layers):
        max_w = max(max_w, fan_in[i], fan_out[i])
    n = perm.size
    n_params = params.size
    acts = np.zeros((n_layers + 1, batch_size, max_w))
    deltas = np.zeros((n_layers, batch_size, max_w))
    scale = np.ones(batch_size)
    grad = np.zeros(n_params)
    t = t0
    step = 0
    for start in range(0, n, batch_size):
        bs = min(batch_size, n - start)
        for i in range(bs):
            r = perm[start + i]
            for k in range(fan_in[0]):
                acts[0, i, k] = x[r, k]
        for layer in range(n_layers):
            fi = fan_in[layer]
            fo = fan_out[layer]
            wo = w_off[layer]
            bo = b_off[layer]
            for i in range(bs):
                for o in range(fo):
                    acts[layer + 1, i, o] = params[bo + o]
                for k in range(fi):
                    a = acts[layer, i, k]
                    if a != 0.0:
                        row = wo + k * fo
                        for o in range(fo):
                            acts[layer + 1, i, o] += a * params[row + o]
                if layer < n_layers - 1:
                    for o in range(fo):
                        if acts[layer + 1, i, o] < 0.0:
                            acts[layer + 1, i, o] = 0.0
        last = n_layers - 1
        for i in range(bs):
            z = acts[n_layers, i, 0]
            if z >= 0:
                s = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                s = ez / (1.0 + ez)
            deltas[last, i, 0] = s - y[perm[start + i]]
        for layer in range(last, 0, -1):
            fi = fan_in[layer]
            fo = fan_out[layer]
            wo = w_off[layer]
            for i in range(bs):
                for k in range(fi):
                    if acts[layer, i, k] > 0.0:
                        acc = 0.0
                        row = wo + k * fo
                        for o in range(fo):
                            acc += deltas[layer, i, o] * params[row + o]
                        deltas[layer - 1, i, k] = acc
                    else:
                        deltas[layer - 1, i, k] = 0.0

        if use_clip:
            for i in range(bs):
                sq = 0.0
                for layer in range(n_layers):
                    d_sq = 0.0
                    for o in range(fan_out[layer]):
                        d_sq += deltas[layer, i, o] * deltas[layer, i, o]
                    a_sq = 1.0
                    for k in range(fan_in[layer]):
                        a_sq += acts[layer, i, k] * acts[layer, i, k]
                    sq += d_sq * a_sq
                norm = np.sqrt(sq)
                scale[i] = 1.0 if norm <= clip else clip / norm

        for p in range(n_params):
            grad[p] = 0.0
        for layer in range(n_layers):
            fi = fan_in[layer]
            fo = fan_out[layer]
            wo = w_off[layer]
            bo = b_off[layer]
            for i in range(bs):
                c = scale[i]
                for o in range(fo):
                    d = deltas[layer, i, o] * c
                    if d != 0.0:
                        grad[bo + o] += d
                        for k in range(fi):
                            grad[wo + k * fo + o] += acts[layer, i, k] * d
        if use_noise:
            for p in range(n_params):
                grad[p] += noise[step, p]
        for p in range(n_params):
            grad[p] /= bs

        if adam:
            t += 1
            c1 = 1.0 - beta1**t
            c2 = 1.0 - beta2**t
            for p in range(n_params):
                g = grad[p]
                m[p] = beta1 * m[p] + (1.0 - beta1) * g
                v[p] = beta2 * v[p] + (1.0 - beta2) * g * g
                params[p] -= lr * (m[p] / c1) / (np.sqrt(v[p] / c2) + eps)
        else:
            for p in range(n_params):
                params[p] -= lr * grad[p]
        step += 1
    return t
