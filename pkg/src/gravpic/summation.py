"""Deterministic, low-drift summation helpers.

Every reduction in the package funnels through these routines so that
outputs are reproducible run to run and do not depend on worker count:
numpy's pairwise ``sum``/``dot`` and the blocked prefix sum below all fix
their accumulation order.
"""

import numpy as np


def blocked_cumsum(x, block=512):
    """Cumulative sum with pairwise-accumulated block offsets.

    A plain running sum over n like-signed terms drifts like n*eps; summing
    fixed-size blocks and accumulating block totals pairwise keeps the
    absolute error near block*eps, which the sorted-prefix-sum field
    evaluation relies on.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        return np.zeros(0)
    if n <= block:
        return np.cumsum(x)
    nfull = (n // block) * block
    body = x[:nfull].reshape(-1, block)
    out = np.empty(n)
    out[:nfull] = np.cumsum(body, axis=1).ravel()
    tail = x[nfull:]
    if tail.size:
        out[nfull:] = np.cumsum(tail)
    # offsets: pairwise block totals, then a short cumsum over ~n/block terms
    totals = body.sum(axis=1)
    if tail.size:
        offsets = np.concatenate([[0.0], np.cumsum(totals)])
    else:
        offsets = np.concatenate([[0.0], np.cumsum(totals[:-1])])
    out += np.repeat(offsets, [block] * (nfull // block) + ([tail.size] if tail.size else []))
    return out


def prefix_sums(x, block=512):
    """Exclusive prefix array P with P[i] = sum of the first i entries."""
    x = np.asarray(x, dtype=float)
    p = np.empty(x.size + 1)
    p[0] = 0.0
    if x.size:
        p[1:] = blocked_cumsum(x, block=block)
    return p
