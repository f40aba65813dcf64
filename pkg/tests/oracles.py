"""Independent reference computations used as test oracles."""

import itertools

import numpy as np


def central_difference(f, params, h=1e-5):
    """Numerical gradient of scalar f() w.r.t. every entry of every array in params (mutated in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = f()
            p[i] = old - h
            down = f()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def resolutions(trits):
    """All {+1,-1} vectors a ternary vector can resolve to, by explicit product."""
    choices = [(t,) if t != 0 else (1, -1) for t in trits]
    return {tuple(c) for c in itertools.product(*choices)}


def brute_force_recall_set(query, codes):
    """Ids whose code collides with the query in at least one segment, bit by bit."""
    hits = set()
    for cid, code in enumerate(codes):
        for qs, cs in zip(query, code):
            if all(int(a) * int(b) != -1 for a, b in zip(qs, cs)):
                hits.add(cid)
                break
    return hits


def naive_hamming(a_bits, b_bits):
    return sum(1 for x, y in zip(a_bits, b_bits) if (x > 0) != (y > 0))
