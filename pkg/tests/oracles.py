"""Brute-force reference computations, written independently of the library."""

import itertools
import math

import numpy as np


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def ctc_collapse(path, blank):
    out = []
    prev = None
    for s in path:
        if s != blank and s != prev:
            out.append(s)
        prev = s
    return tuple(out)


def ctc_brute_force(probs, blank):
    """{label sequence: probability} by summing every alignment."""
    probs = np.asarray(probs, dtype=np.float64)
    frames, states = probs.shape
    out = {}
    for path in itertools.product(range(states), repeat=frames):
        p = math.prod(probs[t, s] for t, s in enumerate(path))
        if p > 0:
            h = ctc_collapse(path, blank)
            out[h] = out.get(h, 0.0) + p
    return out


def edit_paths(h, y):
    """Every monotonic op path producing y from h, as a list of arcs.

    Arcs are ("sub", j, i), ("ins", j, i), ("del", j), ("tins", i), ("end",).
    """
    n, length = len(h), len(y)
    paths = []

    def walk(j, i, acc):
        if j == n:
            if i == length:
                paths.append(acc + [("end",)])
            else:
                walk(j, i + 1, acc + [("tins", i)])
            return
        if i < length:
            walk(j + 1, i + 1, acc + [("sub", j, i)])
            walk(j, i + 1, acc + [("ins", j, i)])
        walk(j + 1, i, acc + [("del", j)])

    walk(0, 0, [])
    return paths


def transducer_tables(emit_logits, op_logits):
    emit_logits = np.asarray(emit_logits, dtype=np.float64)
    V, G = emit_logits.shape[0] - 1, emit_logits.shape[1] - 1
    rows = [softmax(emit_logits[r, :G]) for r in range(V)]
    end = softmax(emit_logits[V])
    return rows, end, softmax(op_logits)


def edit_brute_force(emit_logits, op_logits, h, y):
    """p(y|h) as an explicit sum over enumerated edit paths (linear domain)."""
    rows, end, ops = transducer_tables(emit_logits, op_logits)
    G = len(end) - 1
    total = 0.0
    for path in edit_paths(h, y):
        p = 1.0
        for arc in path:
            if arc[0] == "sub":
                p *= ops[0] * rows[h[arc[1]]][y[arc[2]]]
            elif arc[0] == "ins":
                p *= ops[1] * rows[h[arc[1]]][y[arc[2]]]
            elif arc[0] == "del":
                p *= ops[2]
            elif arc[0] == "tins":
                p *= end[y[arc[1]]]
            else:
                p *= end[G]
        total += p
    return total


def all_strings(num_symbols, max_len):
    for length in range(max_len + 1):
        yield from itertools.product(range(num_symbols), repeat=length)


def central_difference(f, x, step=1e-5):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (f(up) - f(down)) / (2 * step)
    return grad


def random_lattice_probs(rng, frames, num_phonemes, peak=None):
    """Rows from a Dirichlet(1); optional peak sharpens toward random states."""
    probs = rng.dirichlet(np.ones(num_phonemes + 1), size=frames)
    if peak:
        probs = probs**peak
        probs /= probs.sum(axis=1, keepdims=True)
    return probs
